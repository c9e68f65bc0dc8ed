"""Independent ground truth for decoupled problems (drivers in (t, x) only).

A one-dimensional lattice dynamic program computes the optimal-switching
value: backward Bellman recursion with a Gauss-Hermite transition step for
the conditional Gaussian of the Euler kernel, piecewise-linear value
interpolation, and clamping at the grid edges.  Exhaustive enumeration of
mode sequences on tiny instances validates the DP itself, and a path-wise
strategy evaluator checks dominance and attainment on simulated ensembles.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss

from . import expr
from .errors import DecoupledViolation, ProjectionCycle, TooLarge
from .forward import PathBundle, TimeGrid
from .model import ProblemSpec

__all__ = [
    "LatticeSpec",
    "SwitchingValue",
    "default_lattice",
    "solve_switching_dp",
    "enumerate_strategies_small",
    "evaluate_strategy",
]

CONTINUE = -1


@dataclass(frozen=True)
class LatticeSpec:
    """State grid plus transition quadrature for the d = 1 lattice."""

    lower: float
    upper: float
    n_nodes: int = 401
    gh_order: int = 7

    def __post_init__(self):
        if self.n_nodes < 3:
            raise ValueError("need at least three lattice nodes")
        if not self.lower < self.upper:
            raise ValueError("need lower < upper")
        if self.gh_order < 1:
            raise ValueError("quadrature order must be >= 1")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.n_nodes)


def default_lattice(
    spec: ProblemSpec, x: float, grid: TimeGrid, span: float = 5.0, n_nodes: int = 401,
    gh_order: int = 7,
) -> LatticeSpec:
    """Grid covering [x - span s sqrt(T), x + span s sqrt(T)], s = sigma at the start."""
    env = {"t": grid.t0, "x1": float(x)}
    scale = abs(float(expr.evaluate(spec.sigma[0][0], env)))
    width = max(span * scale * np.sqrt(grid.T - grid.t0), 1e-6)
    return LatticeSpec(lower=float(x) - width, upper=float(x) + width, n_nodes=n_nodes,
                       gh_order=gh_order)


def _require_decoupled(spec: ProblemSpec) -> None:
    if spec.d != 1:
        raise ValueError("the lattice oracle is one-dimensional")
    for i in range(spec.m):
        coupled = spec.driver_coupling_symbols(i)
        if coupled:
            raise DecoupledViolation(i + 1, coupled)


def _quad_weights(order: int):
    points, weights = hermgauss(order)
    return np.sqrt(2.0) * points, weights / np.sqrt(np.pi)


def _expected_next(values: np.ndarray, positions: np.ndarray, xs: np.ndarray,
                   weights: np.ndarray) -> np.ndarray:
    """E[v(X')] by quadrature; interpolation clamps outside the grid."""
    interp = np.interp(positions, xs, values)
    return interp @ weights


@dataclass
class SwitchingValue:
    """Value surfaces per (time node, mode) plus the optimal action table.

    action[k, i, node] is CONTINUE (-1) or the 0-based target mode; ties
    resolve to continue, so tables are deterministic.
    """

    spec_name: str
    grid: TimeGrid
    lattice: LatticeSpec
    values: np.ndarray  # (K+1, m, n_nodes)
    action: np.ndarray  # (K, m, n_nodes) int

    def value_at(self, k: int, i: int, x: float) -> float:
        return float(np.interp(x, self.lattice.nodes, self.values[k, i]))

    def start_values(self, x: float) -> list:
        return [self.value_at(0, i, x) for i in range(self.values.shape[1])]


def _transition_positions(spec: ProblemSpec, t: float, xs: np.ndarray, dt: float,
                          shift: np.ndarray) -> np.ndarray:
    env = {"t": t, "x1": xs}
    drift = np.broadcast_to(np.asarray(expr.evaluate(spec.b[0], env), dtype=float), xs.shape)
    vol = np.broadcast_to(np.asarray(expr.evaluate(spec.sigma[0][0], env), dtype=float), xs.shape)
    mean = xs + drift * dt
    return mean[:, None] + (vol * np.sqrt(dt))[:, None] * shift[None, :]


def _driver_values(spec: ProblemSpec, i: int, t: float, xs: np.ndarray) -> np.ndarray:
    env = {"t": t, "x1": xs}
    return np.broadcast_to(np.asarray(expr.evaluate(spec.f[i], env), dtype=float), xs.shape)


def _cost_values(spec: ProblemSpec, i: int, j: int, t: float, xs: np.ndarray) -> np.ndarray:
    env = {"t": t, "x1": xs}
    return np.broadcast_to(np.asarray(expr.evaluate(spec.g[i][j], env), dtype=float), xs.shape)


def solve_switching_dp(spec: ProblemSpec, lattice: LatticeSpec, grid: TimeGrid) -> SwitchingValue:
    """Bellman recursion V^i = max(Q^i, max_j(V^j - g_ij)) on the lattice.

    Q^i is the continuation value (quadrature expectation of the next value
    surface plus dt times the running payoff).  The switch max is iterated
    to a fixed point, which under loop-free costs stabilises within m
    sweeps; the obstacle inequality then holds exactly at every node.
    """
    _require_decoupled(spec)
    m = spec.m
    K = grid.K
    dt = grid.dt
    xs = lattice.nodes
    shift, weights = _quad_weights(lattice.gh_order)
    values = np.empty((K + 1, m, lattice.n_nodes))
    action = np.full((K, m, lattice.n_nodes), CONTINUE, dtype=np.int64)
    env_term = {"x1": xs}
    for i in range(m):
        values[K, i] = np.broadcast_to(
            np.asarray(expr.evaluate(spec.h[i], env_term), dtype=float), xs.shape
        )
    for k in range(K - 1, -1, -1):
        t_k = float(grid.nodes[k])
        positions = _transition_positions(spec, t_k, xs, dt, shift)
        cont = np.empty((m, lattice.n_nodes))
        for i in range(m):
            cont[i] = _expected_next(values[k + 1, i], positions, xs, weights) + dt * (
                _driver_values(spec, i, t_k, xs)
            )
        costs = {
            (i, j): _cost_values(spec, i, j, t_k, xs)
            for i in range(m)
            for j in range(m)
            if i != j
        }
        v_cur = cont.copy()
        for _ in range(m + 1):
            changed = False
            for i in range(m):
                alt = None
                for j in range(m):
                    if j == i:
                        continue
                    cand = v_cur[j] - costs[(i, j)]
                    alt = cand if alt is None else np.maximum(alt, cand)
                if alt is None:
                    continue
                new = np.maximum(cont[i], alt)
                if not changed and not np.array_equal(new, v_cur[i]):
                    changed = True
                v_cur[i] = new
            if not changed:
                break
        else:
            raise ProjectionCycle(k, {"t": t_k})
        for i in range(m):
            best_alt = None
            best_j = None
            for j in range(m):
                if j == i:
                    continue
                cand = v_cur[j] - costs[(i, j)]
                if best_alt is None:
                    best_alt, best_j = cand.copy(), np.full(lattice.n_nodes, j)
                else:
                    take = cand > best_alt
                    best_alt = np.where(take, cand, best_alt)
                    best_j = np.where(take, j, best_j)
            if best_alt is not None:
                switch = best_alt > cont[i]
                action[k, i] = np.where(switch, best_j, CONTINUE)
        values[k] = v_cur
    return SwitchingValue(
        spec_name=spec.name, grid=grid, lattice=lattice, values=values, action=action
    )


def enumerate_strategies_small(
    spec: ProblemSpec, lattice: LatticeSpec, grid: TimeGrid, x_eval: float
) -> dict:
    """Exact maximum over open-loop mode sequences, per starting mode.

    Enumerates every sequence (a_0 .. a_{K-1}) of modes held on the grid
    intervals; switches happen at grid times and cost g at the switch time,
    including a possible switch away from the starting mode at t_0.  The
    expectation uses the same quadrature and interpolation as the DP.
    Returns {start mode (1-based): (value, best sequence)}.
    """
    _require_decoupled(spec)
    if spec.m > 3 or grid.K > 5:
        raise TooLarge(f"enumeration bounded at m <= 3, K <= 5; got m={spec.m}, K={grid.K}")
    m = spec.m
    K = grid.K
    dt = grid.dt
    xs = lattice.nodes
    shift, weights = _quad_weights(lattice.gh_order)
    positions = [
        _transition_positions(spec, float(grid.nodes[k]), xs, dt, shift) for k in range(K)
    ]
    env_term = {"x1": xs}
    terminal = [
        np.broadcast_to(np.asarray(expr.evaluate(spec.h[i], env_term), dtype=float), xs.shape)
        for i in range(m)
    ]
    drivers = [
        [_driver_values(spec, i, float(grid.nodes[k]), xs) for i in range(m)] for k in range(K)
    ]
    costs = [
        {
            (i, j): _cost_values(spec, i, j, float(grid.nodes[k]), xs)
            for i in range(m)
            for j in range(m)
            if i != j
        }
        for k in range(K)
    ]
    best = {i: (-np.inf, None) for i in range(m)}
    for seq in itertools.product(range(m), repeat=K):
        w = terminal[seq[K - 1]]
        for k in range(K - 1, -1, -1):
            w = _expected_next(w, positions[k], xs, weights) + dt * drivers[k][seq[k]]
            if k >= 1 and seq[k] != seq[k - 1]:
                w = w - costs[k][(seq[k - 1], seq[k])]
        w_at_x = float(np.interp(x_eval, xs, w))
        for start in range(m):
            value = w_at_x
            if seq[0] != start:
                value -= float(
                    np.interp(x_eval, xs, costs[0][(start, seq[0])])
                )
            if value > best[start][0]:
                best[start] = (value, seq)
    return {start + 1: best[start] for start in range(m)}


def evaluate_strategy(
    spec: ProblemSpec,
    value: SwitchingValue,
    bundle: PathBundle,
    start_mode: int,
    policy=None,
) -> tuple:
    """Monte Carlo payoff of running a strategy along simulated paths.

    By default follows the DP action table (nearest-node lookup, chained
    switches resolved within a step, each hop paying its cost); `policy`
    overrides it with a callable (k, modes, x) -> target mode array using
    CONTINUE (-1) for no switch.  Returns (mean payoff, standard error).
    """
    _require_decoupled(spec)
    if bundle.dim != 1:
        raise ValueError("strategy evaluation is one-dimensional")
    if value is None and policy is None:
        raise ValueError("need a value surface or an explicit policy")
    grid = bundle.grid
    if value is not None:
        if value.grid.K != grid.K or value.grid.t0 != grid.t0 or value.grid.T != grid.T:
            raise ValueError("value surface and bundle use different time grids")
    n_paths = bundle.n_paths
    m = spec.m
    dt = grid.dt
    modes = np.full(n_paths, start_mode - 1, dtype=np.int64)
    payoff = np.zeros(n_paths)
    if value is not None:
        xs = value.lattice.nodes
        spacing = xs[1] - xs[0]

    def table_action(k, modes_now, x_now):
        idx = np.rint((x_now - xs[0]) / spacing).astype(np.int64)
        idx = np.clip(idx, 0, len(xs) - 1)
        return value.action[k, modes_now, idx]

    act = policy if policy is not None else table_action
    for k in range(grid.K):
        t_k = float(grid.nodes[k])
        x_k = bundle.states[:, k, 0]
        for _ in range(m):
            target = np.asarray(act(k, modes, x_k))
            switching = (target != CONTINUE) & (target != modes)
            if not switching.any():
                break
            for i in range(m):
                for j in range(m):
                    if i == j:
                        continue
                    mask = switching & (modes == i) & (target == j)
                    if mask.any():
                        env = {"t": t_k, "x1": x_k[mask]}
                        cost = np.broadcast_to(
                            np.asarray(expr.evaluate(spec.g[i][j], env), dtype=float),
                            (int(mask.sum()),),
                        )
                        payoff[mask] -= cost
            modes = np.where(switching, target, modes)
        for i in range(m):
            mask = modes == i
            if mask.any():
                env = {"t": t_k, "x1": x_k[mask]}
                flow = np.broadcast_to(
                    np.asarray(expr.evaluate(spec.f[i], env), dtype=float), (int(mask.sum()),)
                )
                payoff[mask] += dt * flow
    x_T = bundle.states[:, grid.K, 0]
    for i in range(m):
        mask = modes == i
        if mask.any():
            env = {"x1": x_T[mask]}
            payoff[mask] += np.broadcast_to(
                np.asarray(expr.evaluate(spec.h[i], env), dtype=float), (int(mask.sum()),)
            )
    return float(payoff.mean()), float(payoff.std(ddof=1) / np.sqrt(n_paths))
