"""Batch command-line front end: validate, solve, converge, oracle.

One structured JSON config document drives every command; parsing is strict
(unknown keys are fatal, so a typo in a tolerance name cannot silently
weaken an acceptance run).  All randomness flows from the single seed in
the config (or the --seed override).  Outputs are a manifest, JSON reports
and CSV tables; the only timestamp lives in the manifest, so tables are
byte-identical across reruns of the same config.

Exit codes: 0 success/pass, 1 numeric or acceptance failure, 2 bad config.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, model, oracle, solver
from .errors import ConfigError, DecoupledViolation, SwitchBSDEError
from .forward import TimeGrid, dump_paths_csv, simulate
from .model import ProblemSpec, catalog
from .regress import BasisSpec
from .solver import PicardParams

_TOP_KEYS = {"problem", "simulate", "solver", "ladder", "oracle", "validate", "output"}
_SIM_KEYS = {"x", "t0", "N", "K", "seed"}
_SOLVER_KEYS = {"basis", "n", "picard"}
_PICARD_KEYS = {"max_iter", "tol"}
_BASIS_KEYS = {"kind", "degree", "standardize", "bins", "box_lo", "box_hi"}
_LADDER_KEYS = {"n_list", "thresholds"}
_THRESH_KEYS = {"penalty_factor", "slope_lo", "slope_hi", "gap_allowance", "comp_allowance"}
_ORACLE_KEYS = {"x", "nodes", "gh_order", "span", "enumerate", "compare_manifest"}
_VALIDATE_KEYS = {"half_width", "points", "theta", "tol_rho", "lipschitz_pairs"}
_OUTPUT_KEYS = {"dir"}
_PROBLEM_KEYS = {"name", "d", "m", "T", "b", "sigma", "f", "h", "g", "q_growth", "p_growth"}


def _check_keys(obj: dict, allowed: set, path: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}{key}'")


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigError("config document must be a JSON object")
    _check_keys(config, _TOP_KEYS, "")
    for section, keys in [
        ("simulate", _SIM_KEYS),
        ("solver", _SOLVER_KEYS),
        ("ladder", _LADDER_KEYS),
        ("oracle", _ORACLE_KEYS),
        ("validate", _VALIDATE_KEYS),
        ("output", _OUTPUT_KEYS),
    ]:
        sub = config.get(section)
        if sub is not None:
            if not isinstance(sub, dict):
                raise ConfigError(f"section '{section}' must be an object")
            _check_keys(sub, keys, f"{section}.")
    if "picard" in config.get("solver", {}):
        _check_keys(config["solver"]["picard"], _PICARD_KEYS, "solver.picard.")
    if "basis" in config.get("solver", {}):
        _check_keys(config["solver"]["basis"], _BASIS_KEYS, "solver.basis.")
    if "thresholds" in config.get("ladder", {}):
        _check_keys(config["ladder"]["thresholds"], _THRESH_KEYS, "ladder.thresholds.")
    if "problem" not in config:
        raise ConfigError("config needs a 'problem' (catalog name or inline document)")
    return config


def _problem_from_config(config: dict) -> ProblemSpec:
    problem = config["problem"]
    if isinstance(problem, str):
        try:
            return catalog(problem)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
    if not isinstance(problem, dict):
        raise ConfigError("'problem' must be a catalog name or an object")
    _check_keys(problem, _PROBLEM_KEYS, "problem.")
    required = {"name", "d", "m", "T", "b", "sigma", "f", "h", "g"}
    missing = required - set(problem)
    if missing:
        raise ConfigError(f"problem document is missing {sorted(missing)}")
    try:
        return ProblemSpec.from_sources(
            name=problem["name"],
            d=int(problem["d"]),
            m=int(problem["m"]),
            T=float(problem["T"]),
            b=problem["b"],
            sigma=problem["sigma"],
            f=problem["f"],
            h=problem["h"],
            g=problem["g"],
            q_growth=float(problem.get("q_growth", 1.0)),
            p_growth=float(problem.get("p_growth", 1.0)),
        )
    except (ValueError, SwitchBSDEError) as exc:
        raise ConfigError(f"bad problem document: {exc}") from None


def _positive_int(section: dict, key: str, default: int, path: str) -> int:
    value = section.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"'{path}{key}' must be a positive integer")
    return value


def _sim_params(config: dict, spec: ProblemSpec, seed_override=None):
    sim = config.get("simulate", {})
    x_raw = sim.get("x", 0.0)
    x = np.atleast_1d(np.asarray(x_raw, dtype=float))
    if x.size == 1 and spec.d > 1:
        x = np.full(spec.d, float(x[0]))
    if x.shape != (spec.d,):
        raise ConfigError(f"'simulate.x' must have {spec.d} coordinates")
    t0 = float(sim.get("t0", 0.0))
    if not 0.0 <= t0 < spec.T:
        raise ConfigError("'simulate.t0' must lie in [0, T)")
    n_paths = _positive_int(sim, "N", 100_000, "simulate.")
    n_steps = _positive_int(sim, "K", 50, "simulate.")
    seed = sim.get("seed", 12345)
    if seed_override is not None:
        seed = seed_override
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("'simulate.seed' must be a non-negative integer")
    return x, TimeGrid(t0=t0, T=spec.T, K=n_steps), n_paths, int(seed)


def _basis_from_config(config: dict) -> BasisSpec:
    raw = config.get("solver", {}).get("basis", {"kind": "polynomial", "degree": 3})
    kind = raw.get("kind", "polynomial")
    try:
        if kind == "polynomial":
            return BasisSpec(
                kind="polynomial",
                degree=int(raw.get("degree", 3)),
                standardize=bool(raw.get("standardize", True)),
            )
        if kind == "hypercube":
            return BasisSpec(
                kind="hypercube",
                bins=tuple(int(v) for v in raw["bins"]),
                box_lo=tuple(float(v) for v in raw["box_lo"]),
                box_hi=tuple(float(v) for v in raw["box_hi"]),
            )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad solver.basis: {exc}") from None
    raise ConfigError(f"unknown basis kind {kind!r}")


def _picard_from_config(config: dict) -> PicardParams:
    raw = config.get("solver", {}).get("picard", {})
    max_iter = _positive_int(raw, "max_iter", 20, "solver.picard.")
    tol = float(raw.get("tol", 1e-10))
    if tol <= 0:
        raise ConfigError("'solver.picard.tol' must be positive")
    return PicardParams(max_iter=max_iter, tol=tol)


def _format_value(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".17g")
    return str(value)


def _write_csv(path: Path, header: list, rows: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_value(v) for v in row) + "\n")


def _write_manifest(out_dir: Path, command: str, config: dict, results: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "package_version": __version__,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": config,
        "results": results,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _say(quiet: bool, *parts) -> None:
    if not quiet:
        print(*parts)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_validate(config: dict, out_dir: Path, seed_override, quiet: bool) -> int:
    spec = _problem_from_config(config)
    section = config.get("validate", {})
    half_width = float(section.get("half_width", 5.0))
    points = int(section.get("points", 11))
    theta = float(section.get("theta", 2.0))
    tol_rho = float(section.get("tol_rho", model.TOL_RHO))
    pairs = int(section.get("lipschitz_pairs", 0))
    tx_grid = model.default_tx_grid(spec, half_width, points)
    x_grid = model.default_x_grid(spec, half_width, points)
    reports = [
        model.validate_no_free_loop(spec, tx_grid),
        model.validate_consistency(spec, x_grid),
        model.validate_rho(spec, tx_grid, tol_rho),
        model.validate_ellipticity(spec, tx_grid, theta),
    ]
    if pairs > 0:
        seed = config.get("simulate", {}).get("seed", 12345)
        if seed_override is not None:
            seed = seed_override
        reports.append(model.estimate_lipschitz(spec, int(seed), pairs, half_width))
    reports_dir = out_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    payload = [r.to_json_dict() for r in reports]
    with open(reports_dir / "validation.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    all_pass = all(r.passed for r in reports if not r.advisory)
    for r in reports:
        status = "pass" if r.passed else "FAIL"
        _say(quiet, f"[{status}] {r.assumption}: worst={r.worst} tol={r.tolerance:g}")
        if not r.passed and r.witness is not None:
            _say(quiet, f"        witness: {r.witness}")
    _write_manifest(out_dir, "validate", config, {"all_pass": all_pass})
    return 0 if all_pass else 1


def cmd_solve(config: dict, out_dir: Path, seed_override, quiet: bool,
              dump_paths: bool = False) -> int:
    spec = _problem_from_config(config)
    x, grid, n_paths, seed = _sim_params(config, spec, seed_override)
    basis = _basis_from_config(config)
    picard = _picard_from_config(config)
    n_penalty = _positive_int(config.get("solver", {}), "n", 128, "solver.")
    bundle = simulate(spec, grid, x, n_paths, seed)
    solution = solver.solve_penalized(spec, bundle, basis, n_penalty, picard)
    solver.accumulate_K(solution)
    tables = out_dir / "tables"
    coef_rows = []
    for k in range(grid.K):
        t_k = float(grid.nodes[k])
        for i in range(spec.m):
            fit = solution.u_fits[k][i]
            for b_idx, coef in enumerate(fit.coefficients):
                coef_rows.append([k, t_k, i + 1, "u", b_idx, float(coef)])
            for l in range(spec.d):
                fit = solution.v_fits[k][i][l]
                for b_idx, coef in enumerate(fit.coefficients):
                    coef_rows.append([k, t_k, i + 1, f"v{l + 1}", b_idx, float(coef)])
    _write_csv(
        tables / "coefficients.csv",
        ["step", "time", "component", "target", "basis_index", "coefficient"],
        coef_rows,
    )
    term_rows = []
    for p in range(bundle.n_paths):
        row = [p]
        row += [float(solution.Y[p, 0, i]) for i in range(spec.m)]
        row += [float(solution.K_proc[p, grid.K, i]) for i in range(spec.m)]
        term_rows.append(row)
    _write_csv(
        tables / "terminal_summary.csv",
        ["path"]
        + [f"y0_{i + 1}" for i in range(spec.m)]
        + [f"k_T_{i + 1}" for i in range(spec.m)],
        term_rows,
    )
    if dump_paths:
        dump_paths_csv(bundle, tables / "paths.csv")
    y0 = [solution.value_at_start(i) for i in range(spec.m)]
    stats = solver.penalty_bound_statistic(solution)
    _say(quiet, f"problem {spec.name}, n={n_penalty}, N={n_paths}, K={grid.K}, seed={seed}")
    for i in range(spec.m):
        _say(quiet, f"  Y_0[{i + 1}] = {y0[i]:.6f}")
    _write_manifest(
        out_dir,
        "solve",
        config,
        {
            "y0": y0,
            "n": n_penalty,
            "penalty_sup_scaled": stats["sup_scaled"],
            "penalty_sup_raw": stats["sup_raw"],
            "obstacle_violation": solver.obstacle_violation(solution),
            "complementarity": solver.complementarity_residual(solution),
            "max_root_residual": solution.diagnostics["max_root_residual"],
            "picard_iters_max": max(solution.diagnostics["picard_iters"]),
            "bundle_checksum": bundle.checksum(),
        },
    )
    return 0


def _ladder_thresholds(config: dict) -> dict:
    raw = config.get("ladder", {}).get("thresholds", {})
    return {
        "penalty_factor": float(raw.get("penalty_factor", 2.0)),
        "slope_lo": float(raw.get("slope_lo", -1.3)),
        "slope_hi": float(raw.get("slope_hi", -0.7)),
        "gap_allowance": float(raw.get("gap_allowance", 1.10)),
        "comp_allowance": float(raw.get("comp_allowance", 1.10)),
    }


def check_ladder(report: solver.ConvergenceReport, thresholds: dict) -> dict:
    """Evaluate the ladder acceptance checks; returns {name: bool}."""
    if report.trivially_constrained_free():
        return {"constraint_never_active": True}
    rows = report.rows
    scaled = [r["penalty_scaled"] for r in rows if r["penalty_scaled"] > 0]
    checks = {}
    checks["penalty_scaled_stable"] = (
        bool(scaled) and max(scaled) <= thresholds["penalty_factor"] * min(scaled)
    )
    slope = report.slope_violation
    checks["violation_slope_in_band"] = (
        not math.isnan(slope) and thresholds["slope_lo"] <= slope <= thresholds["slope_hi"]
    )
    gaps = [r["sup_gap_prev"] for r in rows[1:]]
    checks["gaps_decreasing"] = all(
        b < thresholds["gap_allowance"] * a for a, b in zip(gaps, gaps[1:])
    )
    comps = [r["complementarity"] for r in rows]
    checks["complementarity_decreasing"] = all(
        b <= thresholds["comp_allowance"] * a for a, b in zip(comps, comps[1:])
    )
    return checks


def cmd_converge(config: dict, out_dir: Path, seed_override, quiet: bool) -> int:
    spec = _problem_from_config(config)
    x, grid, n_paths, seed = _sim_params(config, spec, seed_override)
    basis = _basis_from_config(config)
    picard = _picard_from_config(config)
    ladder = config.get("ladder", {})
    n_list = ladder.get("n_list", [8, 16, 32, 64, 128])
    if (
        not isinstance(n_list, list)
        or len(n_list) < 3
        or any(not isinstance(v, int) or v < 1 for v in n_list)
        or any(b <= a for a, b in zip(n_list, n_list[1:]))
    ):
        raise ConfigError("'ladder.n_list' must be >= 3 strictly increasing positive integers")
    report = solver.run_n_ladder(spec, grid, basis, x, n_paths, seed, n_list, picard)
    rows = [
        [
            r["n"],
            r["sup_gap_prev"],
            r["penalty_scaled"],
            r["penalty_raw"],
            r["obstacle_violation"],
            r["complementarity"],
            r["reflected_gap"],
        ]
        for r in report.rows
    ]
    _write_csv(
        out_dir / "tables" / "convergence.csv",
        [
            "n",
            "sup_gap_prev",
            "penalty_scaled",
            "penalty_raw",
            "obstacle_violation",
            "complementarity",
            "reflected_gap",
        ],
        rows,
    )
    thresholds = _ladder_thresholds(config)
    checks = check_ladder(report, thresholds)
    passed = all(checks.values())
    for name, ok in checks.items():
        _say(quiet, f"[{'pass' if ok else 'FAIL'}] {name}")
    _say(quiet, f"violation decay slope: {report.slope_violation:.3f}")
    _write_manifest(
        out_dir,
        "converge",
        config,
        {
            "checks": checks,
            "pass": passed,
            "slope_violation": report.slope_violation,
            "slope_penalty_raw": report.slope_penalty_raw,
            "bundle_checksum": report.bundle_checksum,
            "rows": report.rows,
        },
    )
    return 0 if passed else 1


def cmd_oracle(config: dict, out_dir: Path, seed_override, quiet: bool) -> int:
    spec = _problem_from_config(config)
    section = config.get("oracle", {})
    x, grid, n_paths, seed = _sim_params(config, spec, seed_override)
    x_eval = float(section.get("x", x[0]))
    nodes = int(section.get("nodes", 401))
    gh_order = int(section.get("gh_order", 7))
    span = float(section.get("span", 5.0))
    lattice = oracle.default_lattice(spec, x_eval, grid, span=span, n_nodes=nodes,
                                     gh_order=gh_order)
    surface = oracle.solve_switching_dp(spec, lattice, grid)
    xs = lattice.nodes
    rows = []
    for k in range(grid.K + 1):
        t_k = float(grid.nodes[k])
        for i in range(spec.m):
            for node_idx, node_x in enumerate(xs):
                act = int(surface.action[k, i, node_idx]) + 1 if k < grid.K else 0
                rows.append([t_k, float(node_x), i + 1, float(surface.values[k, i, node_idx]),
                             act if k < grid.K and act > 0 else "continue"])
    _write_csv(
        out_dir / "tables" / "value_surface.csv",
        ["time", "x", "mode", "value", "action"],
        rows,
    )
    start_vals = surface.start_values(x_eval)
    for i in range(spec.m):
        _say(quiet, f"V[{i + 1}](t0, {x_eval:g}) = {start_vals[i]:.6f}")
    results = {"values_at_start": start_vals, "x": x_eval}
    if section.get("enumerate", False):
        enum = oracle.enumerate_strategies_small(spec, lattice, grid, x_eval)
        results["enumeration"] = {
            str(i): {"value": v, "sequence": list(seq)} for i, (v, seq) in enum.items()
        }
        for i, (v, seq) in enum.items():
            _say(quiet, f"enumeration mode {i}: value {v:.6f} via {seq}, "
                        f"gap to DP {abs(v - start_vals[i - 1]):.2e}")
    compare = section.get("compare_manifest")
    if compare:
        try:
            with open(compare) as fh:
                manifest = json.load(fh)
            y0 = manifest["results"]["y0"]
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read solve manifest {compare!r}: {exc}") from None
        diffs = [abs(a - b) for a, b in zip(y0, start_vals)]
        results["solver_comparison"] = {"y0": y0, "abs_diff": diffs}
        for i, dv in enumerate(diffs):
            _say(quiet, f"|Y_0[{i + 1}] - V[{i + 1}]| = {dv:.6f}")
    _write_manifest(out_dir, "oracle", config, results)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="switchbsde",
        description="Solvers and checks for systems of reflected BSDEs with "
        "interconnected obstacles.",
    )
    parser.add_argument("command", choices=["validate", "solve", "converge", "oracle"])
    parser.add_argument("--config", required=True, help="path to the JSON run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, default=None, help="override simulate.seed")
    parser.add_argument("--quiet", action="store_true")
    parser.add_argument(
        "--dump-paths", action="store_true", help="solve only: write the simulated paths CSV"
    )
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        out_dir = Path(args.out if args.out is not None else
                       config.get("output", {}).get("dir", "out"))
        if args.command == "validate":
            return cmd_validate(config, out_dir, args.seed, args.quiet)
        if args.command == "solve":
            return cmd_solve(config, out_dir, args.seed, args.quiet, args.dump_paths)
        if args.command == "converge":
            return cmd_converge(config, out_dir, args.seed, args.quiet)
        return cmd_oracle(config, out_dir, args.seed, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DecoupledViolation as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SwitchBSDEError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
