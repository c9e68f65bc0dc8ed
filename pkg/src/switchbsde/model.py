"""Problem container and executable checks of the structural conditions.

A ProblemSpec bundles every coefficient of one reflected-system instance as
parsed expressions.  The validators probe, on user-declared grids, the
structural conditions the theory needs: non-negative costs with no free
loops, the terminal consistency inequality, the dissipativity of the costs
under the generator of the diffusion, uniform ellipticity, and (advisory
only) Lipschitz difference quotients.  Results are labelled "checked on
grid" - these are sampling checks, never proofs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import expr
from .errors import NonFinite
from .expr import Slot

__all__ = [
    "ProblemSpec",
    "ValidationReport",
    "validate_no_free_loop",
    "validate_consistency",
    "validate_rho",
    "validate_ellipticity",
    "estimate_lipschitz",
    "default_tx_grid",
    "default_x_grid",
    "catalog",
    "catalog_names",
]

LOOP_STRICTNESS = 1e-9
TOL_RHO = 1e-6


@dataclass
class ProblemSpec:
    """All coefficients of one problem instance, as data.

    b and sigma drive the forward diffusion; f, h and g are the drivers,
    terminal payoffs and switching costs of the m-component system.
    q_growth and p_growth are the declared polynomial growth exponents of
    the drivers and terminals, used to scale growth-sensitive statistics.
    """

    name: str
    d: int
    m: int
    T: float
    b: list
    sigma: list
    f: list
    h: list
    g: list
    q_growth: float = 1.0
    p_growth: float = 1.0
    sources: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_sources(
        cls,
        name: str,
        d: int,
        m: int,
        T: float,
        b: list,
        sigma: list,
        f: list,
        h: list,
        g: list,
        q_growth: float = 1.0,
        p_growth: float = 1.0,
    ) -> "ProblemSpec":
        if d < 1 or m < 1:
            raise ValueError("d and m must be positive")
        if d > 9 or m > 9:
            raise ValueError("the reserved variable alphabet caps d and m at 9")
        if T <= 0:
            raise ValueError("horizon T must be positive")
        if len(b) != d:
            raise ValueError(f"drift needs {d} entries, got {len(b)}")
        if len(sigma) != d or any(len(row) != d for row in sigma):
            raise ValueError(f"diffusion must be a {d}x{d} table")
        if len(f) != m:
            raise ValueError(f"need {m} drivers, got {len(f)}")
        if len(h) != m:
            raise ValueError(f"need {m} terminal payoffs, got {len(h)}")
        if len(g) != m or any(len(row) != m for row in g):
            raise ValueError(f"switching costs must be an {m}x{m} table")
        dyn = Slot.dynamics(d)
        drv = Slot.driver(d, m)
        ter = Slot.terminal(d)
        cst = Slot.cost(d)
        b_ast = [expr.parse(src, dyn) for src in b]
        sigma_ast = [[expr.parse(src, dyn) for src in row] for row in sigma]
        f_ast = [expr.parse(src, drv) for src in f]
        h_ast = [expr.parse(src, ter) for src in h]
        g_ast = [[expr.parse(src, cst) for src in row] for row in g]
        for i in range(m):
            if not expr.is_constant_zero(g_ast[i][i]):
                raise ValueError(f"g[{i + 1}][{i + 1}] must be the literal 0, got {g[i][i]!r}")
        if q_growth < 1:
            raise ValueError("q_growth must be >= 1")
        if p_growth < 0:
            raise ValueError("p_growth must be >= 0")
        return cls(
            name=name,
            d=d,
            m=m,
            T=float(T),
            b=b_ast,
            sigma=sigma_ast,
            f=f_ast,
            h=h_ast,
            g=g_ast,
            q_growth=float(q_growth),
            p_growth=float(p_growth),
            sources={"b": list(b), "sigma": [list(r) for r in sigma], "f": list(f),
                     "h": list(h), "g": [list(r) for r in g]},
        )

    # -- vectorised coefficient evaluation helpers (used by the solvers) --

    def state_env(self, t, states: np.ndarray) -> dict:
        env = {"t": t}
        for j in range(self.d):
            env[f"x{j + 1}"] = states[:, j]
        return env

    def eval_g(self, i: int, j: int, t, states: np.ndarray) -> np.ndarray:
        """g_{i+1, j+1} at (t, states); indices are 0-based here."""
        out = expr.evaluate(self.g[i][j], self.state_env(t, states))
        return np.broadcast_to(np.asarray(out, dtype=float), (states.shape[0],))

    def eval_h(self, i: int, states: np.ndarray) -> np.ndarray:
        env = {}
        for j in range(self.d):
            env[f"x{j + 1}"] = states[:, j]
        out = expr.evaluate(self.h[i], env)
        return np.broadcast_to(np.asarray(out, dtype=float), (states.shape[0],))

    def eval_f(self, i: int, t, states: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Driver i at (t, states, y, z); y is (N, m), z is (N, m, d)."""
        env = self.state_env(t, states)
        for k in range(self.m):
            env[f"y{k + 1}"] = y[:, k]
            for l in range(self.d):
                env[f"z{k + 1}{l + 1}"] = z[:, k, l]
        out = expr.evaluate(self.f[i], env)
        return np.broadcast_to(np.asarray(out, dtype=float), (states.shape[0],))

    def driver_coupling_symbols(self, i: int) -> set:
        """y/z symbols referenced by driver i (empty for decoupled drivers)."""
        return {s for s in expr.variables(self.f[i]) if s[0] in ("y", "z")}


@dataclass
class ValidationReport:
    """Outcome of one assumption check on one grid."""

    assumption: str
    grid: str
    worst: float | None
    witness: dict | None
    tolerance: float
    passed: bool
    advisory: bool = False
    note: str = ""

    def to_json_dict(self) -> dict:
        return {
            "assumption": self.assumption,
            "grid": self.grid,
            "pass": self.passed,
            "worst": self.worst,
            "witness": self.witness,
            "tolerance": self.tolerance,
            "advisory": self.advisory,
            "note": self.note,
        }


def default_tx_grid(spec: ProblemSpec, half_width: float = 5.0, points: int = 11) -> list:
    """Tensor grid of (t, x) pairs: `points` nodes per axis on [0,T] x [-L,L]^d."""
    ts = np.linspace(0.0, spec.T, points)
    axes = [np.linspace(-half_width, half_width, points) for _ in range(spec.d)]
    return [
        (float(t), np.array(xs, dtype=float))
        for t in ts
        for xs in itertools.product(*axes)
    ]


def default_x_grid(spec: ProblemSpec, half_width: float = 5.0, points: int = 11) -> list:
    axes = [np.linspace(-half_width, half_width, points) for _ in range(spec.d)]
    return [np.array(xs, dtype=float) for xs in itertools.product(*axes)]


def _point_env(spec: ProblemSpec, t: float, x: np.ndarray) -> dict:
    env = {"t": t}
    for j in range(spec.d):
        env[f"x{j + 1}"] = float(x[j])
    return env


def _grid_label(n: int, kind: str) -> str:
    return f"{n} {kind} sample points"


def validate_no_free_loop(spec: ProblemSpec, grid: list) -> ValidationReport:
    """Costs non-negative, zero on the diagonal, and strictly loop-creating.

    The strict triple inequality g_ij < g_il + g_lj is enforced with margin
    LOOP_STRICTNESS; the reported `worst` is the largest signed violation
    over all sub-checks, so negative means everything passed with room.
    """
    if not grid:
        raise ValueError("grid must be nonempty")
    worst = -np.inf
    witness = None
    triples = [
        (i, j, l)
        for i in range(spec.m)
        for j in range(spec.m)
        for l in range(spec.m)
        if len({i, j, l}) == 3
    ]
    for t, x in grid:
        env = _point_env(spec, t, x)
        gv = np.array(
            [[float(expr.evaluate(spec.g[i][j], env)) for j in range(spec.m)] for i in range(spec.m)]
        )
        for i in range(spec.m):
            v = abs(gv[i, i])
            if v > worst:
                worst, witness = v, {"check": "g_ii = 0", "t": t, "x": list(map(float, x)),
                                     "i": i + 1, "j": i + 1}
            for j in range(spec.m):
                if i == j:
                    continue
                v = -gv[i, j]
                if v > worst:
                    worst, witness = v, {"check": "g_ij >= 0", "t": t, "x": list(map(float, x)),
                                         "i": i + 1, "j": j + 1}
        for i, j, l in triples:
            v = gv[i, j] - gv[i, l] - gv[l, j] + LOOP_STRICTNESS
            if v > worst:
                worst, witness = v, {
                    "check": "g_ij < g_il + g_lj",
                    "t": t,
                    "x": list(map(float, x)),
                    "i": i + 1,
                    "j": j + 1,
                    "l": l + 1,
                }
    passed = worst <= 0.0
    return ValidationReport(
        assumption="switching-costs (no free loop)",
        grid=_grid_label(len(grid), "(t,x)"),
        worst=None if worst == -np.inf else float(worst),
        witness=witness if not passed else witness,
        tolerance=0.0,
        passed=bool(passed),
        note=f"strictness margin {LOOP_STRICTNESS:g} folded into the triple check",
    )


def validate_consistency(spec: ProblemSpec, grid: list) -> ValidationReport:
    """Terminal payoffs dominate switch-then-terminate: h_i >= max(h_j - g_ij(T))."""
    if not grid:
        raise ValueError("grid must be nonempty")
    worst = -np.inf
    witness = None
    for x in grid:
        env = {f"x{j + 1}": float(x[j]) for j in range(spec.d)}
        env_t = dict(env, t=spec.T)
        hv = [float(expr.evaluate(spec.h[i], env)) for i in range(spec.m)]
        for i in range(spec.m):
            for j in range(spec.m):
                if i == j:
                    continue
                v = hv[j] - float(expr.evaluate(spec.g[i][j], env_t)) - hv[i]
                if v > worst:
                    worst, witness = v, {"check": "h_i >= h_j - g_ij(T)",
                                         "x": list(map(float, x)), "i": i + 1, "j": j + 1}
    vacuous = worst == -np.inf
    return ValidationReport(
        assumption="terminal consistency",
        grid=_grid_label(len(grid), "x"),
        worst=None if vacuous else float(worst),
        witness=witness,
        tolerance=0.0,
        passed=bool(vacuous or worst <= 0.0),
        note="vacuous for a single mode" if vacuous else "",
    )


def _generator_apply(spec: ProblemSpec, g_expr, t: float, x: np.ndarray) -> float:
    """(d/dt + L) g at (t, x) via finite differences.

    L g = 1/2 sum_kl (sigma sigma^T)_kl d2g/dx_k dx_l + sum_k b_k dg/dx_k.
    The time derivative switches to a one-sided stencil near t in {0, T}.
    """
    env = _point_env(spec, t, x)
    dt_term = expr.finite_diff_time_bounded(g_expr, env, 0.0, spec.T)
    bvals = np.array([float(expr.evaluate(spec.b[k], env)) for k in range(spec.d)])
    svals = np.array(
        [[float(expr.evaluate(spec.sigma[r][c], env)) for c in range(spec.d)]
         for r in range(spec.d)]
    )
    a = svals @ svals.T
    total = dt_term
    for k in range(spec.d):
        total += bvals[k] * expr.finite_diff(g_expr, f"x{k + 1}", env, order=1)
    for k in range(spec.d):
        for l in range(spec.d):
            if a[k, l] != 0.0:
                total += 0.5 * a[k, l] * expr.finite_diff_mixed(g_expr, f"x{k + 1}", f"x{l + 1}", env)
    return float(total)


def validate_rho(spec: ProblemSpec, grid: list, tol_rho: float = TOL_RHO) -> ValidationReport:
    """Cost dissipativity: (d/dt + L) g_ij <= 0 on the grid, per mode pair."""
    if not grid:
        raise ValueError("grid must be nonempty")
    worst = -np.inf
    witness = None
    for t, x in grid:
        for i in range(spec.m):
            for j in range(spec.m):
                if i == j:
                    continue
                rho = _generator_apply(spec, spec.g[i][j], t, x)
                if rho > worst:
                    worst, witness = rho, {"check": "dg/dt + Lg <= 0", "t": float(t),
                                           "x": list(map(float, x)), "i": i + 1, "j": j + 1}
    vacuous = worst == -np.inf
    return ValidationReport(
        assumption="cost dissipativity (rho <= 0)",
        grid=_grid_label(len(grid), "(t,x)"),
        worst=None if vacuous else float(worst),
        witness=witness,
        tolerance=tol_rho,
        passed=bool(vacuous or worst <= tol_rho),
        note="vacuous for a single mode" if vacuous else "finite-difference estimate",
    )


def validate_ellipticity(spec: ProblemSpec, grid: list, theta: float) -> ValidationReport:
    """Eigenvalues of sigma sigma^T inside [1/theta, theta] at each grid point."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    if not grid:
        raise ValueError("grid must be nonempty")
    worst = -np.inf
    witness = None
    for t, x in grid:
        env = _point_env(spec, t, x)
        svals = np.array(
            [[float(expr.evaluate(spec.sigma[r][c], env)) for c in range(spec.d)]
             for r in range(spec.d)]
        )
        if not np.isfinite(svals).all():
            raise NonFinite(f"sigma non-finite at t={t}, x={x}")
        eigs = np.linalg.eigvalsh(svals @ svals.T)
        v = max(float(eigs[-1]) - theta, 1.0 / theta - float(eigs[0]))
        if v > worst:
            worst, witness = v, {
                "check": "eigs(sigma sigma^T) in [1/theta, theta]",
                "t": float(t),
                "x": list(map(float, x)),
                "eig_min": float(eigs[0]),
                "eig_max": float(eigs[-1]),
            }
    return ValidationReport(
        assumption="uniform ellipticity",
        grid=_grid_label(len(grid), "(t,x)"),
        worst=float(worst),
        witness=witness,
        tolerance=0.0,
        passed=bool(worst <= 0.0),
        note=f"theta = {theta:g}",
    )


def reevaluate_witness(spec: ProblemSpec, report: ValidationReport) -> float:
    """Recompute the reported violation from the witness alone."""
    w = report.witness
    if w is None:
        raise ValueError("report has no witness")
    check = w["check"]
    if check == "g_ii = 0":
        env = _point_env(spec, w["t"], np.asarray(w["x"]))
        return abs(float(expr.evaluate(spec.g[w["i"] - 1][w["i"] - 1], env)))
    if check == "g_ij >= 0":
        env = _point_env(spec, w["t"], np.asarray(w["x"]))
        return -float(expr.evaluate(spec.g[w["i"] - 1][w["j"] - 1], env))
    if check == "g_ij < g_il + g_lj":
        env = _point_env(spec, w["t"], np.asarray(w["x"]))
        gij = float(expr.evaluate(spec.g[w["i"] - 1][w["j"] - 1], env))
        gil = float(expr.evaluate(spec.g[w["i"] - 1][w["l"] - 1], env))
        glj = float(expr.evaluate(spec.g[w["l"] - 1][w["j"] - 1], env))
        return gij - gil - glj + LOOP_STRICTNESS
    if check == "h_i >= h_j - g_ij(T)":
        x = np.asarray(w["x"])
        env = {f"x{k + 1}": float(x[k]) for k in range(spec.d)}
        env_t = dict(env, t=spec.T)
        hi = float(expr.evaluate(spec.h[w["i"] - 1], env))
        hj = float(expr.evaluate(spec.h[w["j"] - 1], env))
        return hj - float(expr.evaluate(spec.g[w["i"] - 1][w["j"] - 1], env_t)) - hi
    if check == "dg/dt + Lg <= 0":
        return _generator_apply(spec, spec.g[w["i"] - 1][w["j"] - 1], w["t"], np.asarray(w["x"]))
    if check == "eigs(sigma sigma^T) in [1/theta, theta]":
        env = _point_env(spec, w["t"], np.asarray(w["x"]))
        svals = np.array(
            [[float(expr.evaluate(spec.sigma[r][c], env)) for c in range(spec.d)]
             for r in range(spec.d)]
        )
        eigs = np.linalg.eigvalsh(svals @ svals.T)
        theta = float(report.note.split("=")[1])
        return max(float(eigs[-1]) - theta, 1.0 / theta - float(eigs[0]))
    raise ValueError(f"unknown witness check {check!r}")


def estimate_lipschitz(
    spec: ProblemSpec,
    seed: int,
    n_pairs: int,
    half_width: float = 5.0,
    yz_half_width: float = 5.0,
) -> ValidationReport:
    """Largest observed difference quotients of b, sigma in x and f in (y, z).

    A statistical lower estimate only: it can refute a smoothness claim when
    quotients blow up with the sampled range (checked by comparing the
    estimate on the base box against a doubled box), never certify one.
    Always advisory.
    """
    if n_pairs < 1:
        raise ValueError("need at least one pair")
    rng = np.random.default_rng(seed)

    def max_quotient_dynamics(width: float) -> tuple:
        worst, wit = 0.0, None
        for _ in range(n_pairs):
            t = float(rng.uniform(0.0, spec.T))
            x1 = rng.uniform(-width, width, spec.d)
            x2 = rng.uniform(-width, width, spec.d)
            dist = float(np.linalg.norm(x1 - x2))
            if dist < 1e-12:
                continue
            e1, e2 = _point_env(spec, t, x1), _point_env(spec, t, x2)
            db = np.array(
                [float(expr.evaluate(spec.b[k], e1)) - float(expr.evaluate(spec.b[k], e2))
                 for k in range(spec.d)]
            )
            ds = np.array(
                [
                    float(expr.evaluate(spec.sigma[r][c], e1))
                    - float(expr.evaluate(spec.sigma[r][c], e2))
                    for r in range(spec.d)
                    for c in range(spec.d)
                ]
            )
            q = (float(np.linalg.norm(db)) + float(np.linalg.norm(ds))) / dist
            if q > worst:
                worst, wit = q, {"check": "b/sigma in x", "t": t, "x": list(map(float, x1)),
                                 "x_other": list(map(float, x2))}
        return worst, wit

    def max_quotient_driver(i: int, width: float) -> tuple:
        worst, wit = 0.0, None
        for _ in range(n_pairs):
            t = float(rng.uniform(0.0, spec.T))
            x = rng.uniform(-half_width, half_width, spec.d)
            y1 = rng.uniform(-width, width, spec.m)
            y2 = rng.uniform(-width, width, spec.m)
            z1 = rng.uniform(-width, width, (spec.m, spec.d))
            z2 = rng.uniform(-width, width, (spec.m, spec.d))
            dist = float(np.linalg.norm(y1 - y2) + np.linalg.norm(z1 - z2))
            if dist < 1e-12:
                continue
            f1 = spec.eval_f(i, t, x[None, :], y1[None, :], z1[None, :, :])[0]
            f2 = spec.eval_f(i, t, x[None, :], y2[None, :], z2[None, :, :])[0]
            q = abs(float(f1) - float(f2)) / dist
            if q > worst:
                worst, wit = q, {"check": f"f_{i + 1} in (y,z)", "t": t,
                                 "x": list(map(float, x))}
        return worst, wit

    base_dyn, wit_dyn = max_quotient_dynamics(half_width)
    wide_dyn, _ = max_quotient_dynamics(2.0 * half_width)
    base_f = 0.0
    wit_f = None
    wide_f = 0.0
    for i in range(spec.m):
        q, wit = max_quotient_driver(i, yz_half_width)
        if q > base_f:
            base_f, wit_f = q, wit
        q2, _ = max_quotient_driver(i, 2.0 * yz_half_width)
        wide_f = max(wide_f, q2)
    worst = max(base_dyn, base_f)
    blow_up = (wide_dyn > 1.5 * base_dyn + 1e-12) or (wide_f > 1.5 * base_f + 1e-12)
    note = (
        "difference quotients grow with the sampled range; coefficients may not be Lipschitz"
        if blow_up
        else "no growth detected between the base and doubled sampling boxes"
    )
    return ValidationReport(
        assumption="Lipschitz difference quotients (advisory)",
        grid=f"{n_pairs} random pairs, box half-width {half_width:g}",
        worst=float(worst),
        witness=wit_dyn if base_dyn >= base_f else wit_f,
        tolerance=np.inf,
        passed=True,
        advisory=True,
        note=note,
    )


# ---------------------------------------------------------------------------
# Problem catalog used throughout the tests and the CLI
# ---------------------------------------------------------------------------


def catalog(name: str) -> ProblemSpec:
    """Named problem instances that pin the test and acceptance suites."""
    key = name.upper()
    if key == "CONST":
        return ProblemSpec.from_sources(
            name="CONST",
            d=1, m=2, T=1.0,
            b=["0"], sigma=[["1"]],
            f=["0", "0"],
            h=["1", "1"],
            g=[["0", "1"], ["1", "0"]],
            q_growth=1.0, p_growth=0.0,
        )
    if key == "TWOMODE-SWITCH":
        return ProblemSpec.from_sources(
            name="TWOMODE-SWITCH",
            d=1, m=2, T=1.0,
            b=["0"], sigma=[["1"]],
            f=["pos(x1)", "0"],
            h=["0", "0"],
            g=[["0", "0.5"], ["0.5", "0"]],
            q_growth=1.0, p_growth=1.0,
        )
    if key == "ZCOUPLED":
        return ProblemSpec.from_sources(
            name="ZCOUPLED",
            d=1, m=2, T=1.0,
            b=["0"], sigma=[["1"]],
            f=["0.3*z21", "0.3*z11"],
            h=["x1", "x1"],
            g=[["0", "10"], ["10", "0"]],
            q_growth=1.0, p_growth=1.0,
        )
    if key == "REMARK-PHI":
        return ProblemSpec.from_sources(
            name="REMARK-PHI",
            d=1, m=2, T=1.0,
            b=["0"], sigma=[["1"]],
            f=["0", "0"],
            h=["0", "0"],
            g=[["0", "2 - t"], ["2 - t", "0"]],
            q_growth=1.0, p_growth=0.0,
        )
    raise KeyError(f"unknown catalog problem {name!r}; known: {', '.join(catalog_names())}")


def catalog_names() -> list:
    return ["CONST", "TWOMODE-SWITCH", "ZCOUPLED", "REMARK-PHI"]
