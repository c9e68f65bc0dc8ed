"""Seeded Euler scheme for the forward diffusion.

Produces reproducible path ensembles together with the Brownian increments
that drove them; the increments are needed again by the backward regression
step, and the counter-based substreams make regeneration bit-exact and
independent of evaluation order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import expr
from .errors import NonFiniteState
from .kernels import counter_gaussians

__all__ = ["TimeGrid", "PathBundle", "simulate", "empirical_sup_moment"]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = t0 + k * dt on [t0, T] with K steps."""

    t0: float
    T: float
    K: int

    def __post_init__(self):
        if not (0.0 <= self.t0 < self.T):
            raise ValueError(f"need 0 <= t0 < T, got t0={self.t0}, T={self.T}")
        if self.K < 1:
            raise ValueError("need at least one step")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.K

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t0, self.T, self.K + 1)


@dataclass
class PathBundle:
    """An ensemble of forward paths plus the increments that generated it."""

    grid: TimeGrid
    states: np.ndarray  # (N, K+1, d)
    dW: np.ndarray  # (N, K, d)
    seed: int
    spec_name: str = ""
    x0: np.ndarray = field(default=None)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def checksum(self) -> str:
        """Content hash used to assert common random numbers across runs."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.states).tobytes())
        h.update(np.ascontiguousarray(self.dW).tobytes())
        return h.hexdigest()


def _coefficient_env(t: float, states: np.ndarray) -> dict:
    env = {"t": t}
    for j in range(states.shape[1]):
        env[f"x{j + 1}"] = states[:, j]
    return env


def _eval_drift(spec, t: float, states: np.ndarray) -> np.ndarray:
    n, d = states.shape
    env = _coefficient_env(t, states)
    out = np.empty((n, d))
    for j in range(d):
        out[:, j] = np.broadcast_to(np.asarray(expr.evaluate(spec.b[j], env), dtype=float), (n,))
    return out


def _eval_diffusion(spec, t: float, states: np.ndarray) -> np.ndarray:
    n, d = states.shape
    env = _coefficient_env(t, states)
    out = np.empty((n, d, d))
    for r in range(d):
        for ccol in range(d):
            out[:, r, ccol] = np.broadcast_to(
                np.asarray(expr.evaluate(spec.sigma[r][ccol], env), dtype=float), (n,)
            )
    return out


def simulate(spec, grid: TimeGrid, x, n_paths: int, seed: int) -> PathBundle:
    """Euler step X_{k+1} = X_k + b(t_k, X_k) dt + sigma(t_k, X_k) dW_k.

    Increments come from per-(path, step) counter substreams, so two calls
    with identical arguments return bit-identical bundles regardless of how
    the work is chunked.  A path leaving the finite range aborts the run
    (silently dropping paths would bias the later regressions).
    """
    if n_paths < 1:
        raise ValueError("need at least one path")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = spec.d
    if x.shape != (d,):
        raise ValueError(f"start point has shape {x.shape}, expected ({d},)")
    K = grid.K
    dt = grid.dt
    normals = counter_gaussians(seed, n_paths, K, d)
    dW = normals * np.sqrt(dt)
    states = np.empty((n_paths, K + 1, d))
    states[:, 0, :] = x
    nodes = grid.nodes
    for k in range(K):
        xk = states[:, k, :]
        drift = _eval_drift(spec, float(nodes[k]), xk)
        diff = _eval_diffusion(spec, float(nodes[k]), xk)
        nxt = xk + drift * dt + np.einsum("nrc,nc->nr", diff, dW[:, k, :])
        if not np.isfinite(nxt).all():
            bad = np.argwhere(~np.isfinite(nxt))[0]
            raise NonFiniteState(int(bad[0]), k + 1)
        states[:, k + 1, :] = nxt
    return PathBundle(
        grid=grid, states=states, dW=dW, seed=int(seed), spec_name=spec.name, x0=x.copy()
    )


def empirical_sup_moment(bundle: PathBundle, gamma: float) -> float:
    """Monte Carlo estimate of E[ sup_k |X_{t_k}|^gamma ] over the grid."""
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    norms = np.linalg.norm(bundle.states, axis=2)  # (N, K+1)
    return float(np.mean(np.max(norms, axis=1) ** gamma))


def dump_paths_csv(bundle: PathBundle, path) -> None:
    """Debug CSV with one row per (path, step): path, step, time, x1..xd."""
    nodes = bundle.grid.nodes
    d = bundle.dim
    with open(path, "w", newline="") as fh:
        fh.write("path,step,time," + ",".join(f"x{j + 1}" for j in range(d)) + "\n")
        for n in range(bundle.n_paths):
            for k in range(bundle.grid.K + 1):
                coords = ",".join(format(v, ".17g") for v in bundle.states[n, k])
                fh.write(f"{n},{k},{format(nodes[k], '.17g')},{coords}\n")
