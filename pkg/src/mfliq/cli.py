"""Command-line entry point.

Every subcommand reads a config file, runs deterministically for a fixed
seed, and writes CSV tables, a JSON summary, a manifest echoing the exact
inputs, and (unless ``--no-plots``) PNG figures into the output directory.
Failures exit nonzero with a machine-readable ``error.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, RunConfig, is_leader_config, load_config,
                     make_coefficient_set, make_ensemble, make_follower_model,
                     make_grid, make_leader_model, make_picard_options,
                     make_riccati_model, n_schedule, outer_options)
from .convergence import penalization_study
from .core import check_assumptions, solve_constrained, solve_penalized
from .errors import (AdmissibilityError, ConvergenceError, MfliqError,
                     ModelError, NumericalError)
from .liquidation import admissibility_residual, map_to_core, optimal_strategy, \
    verify_optimality
from .riccati import check_riccati_bounds, solve_riccati
from .stackelberg import (check_game_assumptions, solve_stackelberg,
                          value_convergence)

logger = logging.getLogger("mfliq")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NO_CONVERGENCE = 4
EXIT_NUMERICAL = 5


# ---------------------------------------------------------------------------
# deterministic writers
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(out: Path, cfg: RunConfig, args, subcommand: str) -> None:
    manifest = {
        "subcommand": subcommand,
        "config_file": cfg.path,
        "config": {"model": cfg.model, "grid": cfg.grid,
                   "ensemble": cfg.ensemble, "solver": cfg.solver},
        "seed_override": args.seed,
        "workers": args.workers,
        "plots": not args.no_plots,
        "versions": {"mfliq": __version__,
                     "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    write_json(out / "manifest.json", manifest)


def _stats(arr, n_nodes: int) -> dict:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        flat = arr[None, :]
    else:
        flat = arr.reshape(-1, n_nodes)
    return {
        "mean": flat.mean(axis=0),
        "std": flat.std(axis=0),
        "q10": np.quantile(flat, 0.10, axis=0),
        "q50": np.quantile(flat, 0.50, axis=0),
        "q90": np.quantile(flat, 0.90, axis=0),
    }


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_riccati(cfg: RunConfig, args, out: Path) -> int:
    grid = make_grid(cfg)
    opts = make_picard_options(cfg)
    inp, penalty = make_riccati_model(cfg, grid)
    kind = "singular" if penalty is None else "penalized"
    sol = solve_riccati(inp, kind, grid, n=penalty, n_substeps=opts.n_substeps)
    rep = check_riccati_bounds(sol, inp, grid)
    rows = []
    nodes = rep.nodes
    for i, t in enumerate(nodes):
        rows.append([t, rep.a_values[i], sol.psi[i],
                     rep.lower[i] if rep.lower is not None else None,
                     rep.upper[i] if rep.upper is not None else None])
    write_csv(out / "riccati.csv", ["t", "A", "psi", "lower_bound", "upper_bound"], rows)
    write_json(out / "summary.json", {
        "terminal_kind": rep.terminal_kind, "penalty_level": rep.penalty_level,
        "beta": rep.beta,
        "discount_c_fitted": rep.discount_c_fitted,
        "exp1_c_fitted": rep.exp1_c_fitted,
        "sandwich_max_violation": rep.sandwich_max_violation,
        "discount_max_violation": rep.discount_max_violation,
        "bounds_ok": rep.ok,
    })
    if not args.no_plots:
        from .plots import riccati_figure
        riccati_figure(nodes, rep.a_values, rep.lower, rep.upper, out / "riccati.png")
    return EXIT_OK if rep.ok else EXIT_NUMERICAL


def _cmd_solve(cfg: RunConfig, args, out: Path) -> int:
    grid = make_grid(cfg)
    ensemble = make_ensemble(cfg, grid, args.seed)
    opts = make_picard_options(cfg)
    coeffs, penalty = make_coefficient_set(cfg, grid)
    feas = check_assumptions(coeffs, grid=grid)
    if penalty is None:
        sol = solve_constrained(coeffs, ensemble, opts)
    else:
        sol = solve_penalized(coeffs, penalty, ensemble, opts)
    sq = _stats(sol.Q, grid.n_nodes)
    sh = _stats(sol.H, grid.n_nodes)
    sr = _stats(sol.R, grid.n_nodes)
    header = ["t"]
    for name in ("q", "h", "r"):
        header += [f"{name}_mean", f"{name}_std", f"{name}_q10", f"{name}_q50", f"{name}_q90"]
    rows = []
    for k, t in enumerate(grid.nodes):
        row = [t]
        for s in (sq, sh, sr):
            row += [s["mean"][k], s["std"][k], s["q10"][k], s["q50"][k], s["q90"][k]]
        rows.append(row)
    write_csv(out / "solution.csv", header, rows)
    from .core import l2_time_norm, weighted_norm
    write_json(out / "summary.json", {
        "iterations": sol.iterations,
        "converged": sol.converged,
        "residual_history": sol.residual_history,
        "alpha": sol.alpha,
        "terminal_inventory": sol.terminal_inventory(),
        "ansatz_residual": sol.ansatz_residual(),
        "norm_q_weighted": weighted_norm(sol.Q, sol.alpha, grid),
        "norm_r_l2": l2_time_norm(sol.R, grid),
        "feasibility": feas.as_dict(),
        "penalty_level": sol.penalty_level,
        "regression_fallback_nodes": sol.diagnostics.get("regression_fallback_nodes", []),
    })
    if not args.no_plots:
        from .plots import trajectory_figure
        trajectory_figure(grid.nodes, {
            "Q": (sq["mean"], sq["q10"], sq["q90"]),
            "H": (sh["mean"], sh["q10"], sh["q90"]),
            "R": (sr["mean"], sr["q10"], sr["q90"]),
        }, out / "solution.png")
    return EXIT_OK


def _cmd_liquidate(cfg: RunConfig, args, out: Path) -> int:
    grid = make_grid(cfg)
    ensemble = make_ensemble(cfg, grid, args.seed)
    opts = make_picard_options(cfg)
    model = make_follower_model(cfg, grid)
    feas = model.feasibility()
    if not feas["feasible"]:
        raise ModelError(f"infeasible liquidation model: margins {feas['margins']}")
    bundle = optimal_strategy(model, ensemble, opts)
    sx = _stats(bundle.xi, grid.n_nodes)
    sq = _stats(bundle.X, grid.n_nodes)
    sy = _stats(bundle.Y, grid.n_nodes)
    header = ["t"]
    for name in ("xi", "x", "y"):
        header += [f"{name}_mean", f"{name}_std", f"{name}_q10", f"{name}_q50", f"{name}_q90"]
    rows = []
    for k, t in enumerate(grid.nodes):
        row = [t]
        for s in (sx, sq, sy):
            row += [s["mean"][k], s["std"][k], s["q10"][k], s["q50"][k], s["q90"][k]]
        rows.append(row)
    write_csv(out / "liquidation.csv", header, rows)
    try:
        opt_min = verify_optimality(model, bundle, trials=32, delta=0.1, seed=ensemble.seed)
    except AdmissibilityError:
        opt_min = None
    write_json(out / "summary.json", {
        "cost": bundle.cost,
        "constraint_residual": admissibility_residual(model.x, bundle.xi, grid),
        "terminal_inventory": bundle.terminal_inventory(),
        "optimality_check_min": opt_min,
        "iterations": bundle.bundle.iterations,
        "feasibility": feas,
    })
    if not args.no_plots:
        from .plots import trajectory_figure
        trajectory_figure(grid.nodes, {
            "rate": (sx["mean"], sx["q10"], sx["q90"]),
            "inventory": (sq["mean"], sq["q10"], sq["q90"]),
        }, out / "liquidation.png")
    return EXIT_OK


def _cmd_stackelberg(cfg: RunConfig, args, out: Path) -> int:
    grid = make_grid(cfg)
    ensemble = make_ensemble(cfg, grid, args.seed)
    opts = make_picard_options(cfg)
    model = make_leader_model(cfg, grid)
    assumptions = check_game_assumptions(model)
    if not assumptions.feasible:
        raise ModelError("infeasible game assumptions")
    sol = solve_stackelberg(model, ensemble, opts, **outer_options(cfg))
    names = {"xi0": sol.xi0, "x0": sol.X0, "xi": sol.follower.xi,
             "x": sol.follower.X, "q": sol.q, "r": sol.r, "p_bar": sol.p_bar}
    stats = {k: _stats(v, grid.n_nodes) for k, v in names.items()}
    header = ["t"] + [f"{k}_mean" for k in names]
    rows = []
    for k, t in enumerate(grid.nodes):
        rows.append([t] + [stats[name]["mean"][k] for name in names])
    write_csv(out / "stackelberg.csv", header, rows)
    write_json(out / "summary.json", {
        "j0": sol.J0,
        "outer_iterations": sol.outer_iterations,
        "fixed_point_residual": sol.fixed_point_residual,
        "representation_residual": sol.representation_residual,
        "outer_residual_history": sol.outer_residual_history,
        "terminal_inventory_leader": sol.terminal_inventory_leader(),
        "terminal_inventory_follower": sol.terminal_inventory_follower(),
        "assumptions": assumptions.as_dict(),
    })
    if not args.no_plots:
        from .plots import trajectory_figure
        trajectory_figure(grid.nodes, {
            "leader rate": stats["xi0"]["mean"],
            "leader inventory": stats["x0"]["mean"],
            "follower rate": stats["xi"]["mean"],
            "follower inventory": stats["x"]["mean"],
        }, out / "stackelberg.png")
    return EXIT_OK


def _cmd_study_penalization(cfg: RunConfig, args, out: Path) -> int:
    grid = make_grid(cfg)
    ensemble = make_ensemble(cfg, grid, args.seed)
    opts = make_picard_options(cfg)
    coeffs, _ = make_coefficient_set(cfg, grid)
    rep = penalization_study(coeffs, n_schedule(cfg), ensemble, opts)
    rows = rep.rows()
    header = list(rows[0].keys())
    write_csv(out / "penalization.csv", header, [[r[h] for h in header] for r in rows])
    write_json(out / "summary.json", {
        "nu": rep.nu,
        "n_schedule": rep.n_schedule,
        "input_scale": rep.input_scale,
        "dist_q_monotone": bool(all(b <= a + 1e-12 for a, b in
                                    zip(rep.dist_q, rep.dist_q[1:]))),
        "terminal_residual_decreasing": bool(all(b <= a + 1e-12 for a, b in
                                                 zip(rep.terminal_residual_max,
                                                     rep.terminal_residual_max[1:]))),
    })
    if not args.no_plots:
        from .plots import convergence_figure
        convergence_figure(rep.n_schedule, {
            "dist Q": rep.dist_q, "dist H": rep.dist_h, "dist R": rep.dist_r,
            "terminal residual": rep.terminal_residual_max,
        }, out / "penalization.png")
    return EXIT_OK


def _cmd_study_value(cfg: RunConfig, args, out: Path) -> int:
    grid = make_grid(cfg)
    ensemble = make_ensemble(cfg, grid, args.seed)
    opts = make_picard_options(cfg)
    model = make_leader_model(cfg, grid)
    rep = value_convergence(model, n_schedule(cfg), ensemble, opts, **outer_options(cfg))
    rows = rep.rows()
    header = list(rows[0].keys())
    write_csv(out / "values.csv", header, [[r[h] for h in header] for r in rows])
    write_json(out / "summary.json", {
        "j0_constrained": rep.j0_constrained,
        "sandwich_tol": rep.sandwich_tol,
        "sandwich_all_ok": bool(all(rep.sandwich_ok)),
        "values": rep.values,
        "cesaro_values": rep.cesaro_values,
    })
    if not args.no_plots:
        from .plots import value_figure
        value_figure(rep.n_schedule, rep.values, rep.cesaro_values,
                     rep.j0_constrained, out / "values.png")
    return EXIT_OK


def _cmd_check(cfg: RunConfig, args, out: Path) -> int:
    grid = make_grid(cfg)
    if is_leader_config(cfg):
        model = make_leader_model(cfg, grid)
        rep = check_game_assumptions(model)
        payload = rep.as_dict()
        feasible = rep.feasible
    elif "eta" in cfg.model:
        model = make_follower_model(cfg, grid)
        feas = model.feasibility()
        core_rep = check_assumptions(map_to_core(model), grid=grid)
        payload = {"follower": feas, "core": core_rep.as_dict()}
        feasible = feas["feasible"] and core_rep.feasible
    else:
        coeffs, _ = make_coefficient_set(cfg, grid)
        core_rep = check_assumptions(coeffs, grid=grid)
        payload = {"core": core_rep.as_dict()}
        feasible = core_rep.feasible
    payload["feasible"] = feasible
    write_json(out / "summary.json", payload)
    return EXIT_OK if feasible else EXIT_INFEASIBLE


COMMANDS = {
    "riccati": _cmd_riccati,
    "solve": _cmd_solve,
    "liquidate": _cmd_liquidate,
    "stackelberg": _cmd_stackelberg,
    "study-penalization": _cmd_study_penalization,
    "study-value": _cmd_study_value,
    "check": _cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfliq",
        description="Constrained conditional mean-field FBSDE solver for "
                    "optimal liquidation and the leader-follower game")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML/JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the ensemble seed from the config")
        p.add_argument("--workers", type=int, default=1,
                       help="worker count (the implementation is vectorized; "
                            "values > 1 are accepted and recorded)")
        p.add_argument("--no-plots", action="store_true",
                       help="skip PNG figure rendering")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    try:
        cfg = load_config(args.config)
        write_manifest(out, cfg, args, args.subcommand)
        code = COMMANDS[args.subcommand](cfg, args, out)
    except ConfigError as exc:
        _write_error(out, "config", exc)
        return EXIT_CONFIG
    except ModelError as exc:
        _write_error(out, "infeasible", exc)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        _write_error(out, "no_convergence", exc,
                     extra={"residual_history": exc.residual_history})
        return EXIT_NO_CONVERGENCE
    except (NumericalError, AdmissibilityError, MfliqError) as exc:
        _write_error(out, "numerical", exc)
        return EXIT_NUMERICAL
    logger.info("%s finished in %.2fs", args.subcommand, time.time() - started)
    return code


def _write_error(out: Path, kind: str, exc: Exception, extra: dict | None = None) -> None:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    if extra:
        payload.update(extra)
    try:
        write_json(out / "error.json", payload)
    except OSError:
        pass
    print(f"error ({kind}): {exc}", file=sys.stderr)


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
