"""Run configuration: a structured YAML/JSON file with four sections.

``model`` holds the coefficients (constants or [t, value] tables), ``grid``
the time discretization, ``ensemble`` the particle counts and seed, and
``solver`` the iteration controls.  Unknown keys are rejected so typos
fail loudly instead of silently running defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .core import CoefficientSet, PicardOptions
from .errors import MfliqError
from .liquidation import FollowerModel
from .paths import TimeGrid, build_grid, simulate_ensemble
from .stackelberg import LeaderModel
from .timefuncs import time_function_from_config


class ConfigError(MfliqError):
    """Invalid run configuration."""


GRID_KEYS = {"T", "n_uniform", "n_refined", "ratio", "epsilon_final"}
ENSEMBLE_KEYS = {"m_common", "m_idio", "seed"}
SOLVER_KEYS = {"tol", "max_iter", "damping", "alpha", "nu", "basis_degree",
               "n_schedule", "outer_tol", "outer_max_iter", "outer_damping",
               "coupling_ramp", "n_substeps"}
RICCATI_MODEL_KEYS = {"lambda1", "lambda4", "drift_linear", "penalty"}
COEFF_MODEL_KEYS = {"lambda1", "lambda2", "lambda3", "lambda4", "lambda5",
                    "gamma", "zeta", "rho", "chi", "f_bar", "g_bar", "penalty"}
FOLLOWER_MODEL_KEYS = {"eta", "kappa", "lambda", "g_tilde", "x"}
LEADER_MODEL_KEYS = FOLLOWER_MODEL_KEYS | {
    "eta0", "kappa0", "kappabar0", "lambda0", "lambdabar", "kappatilde0", "x0"}


@dataclass
class RunConfig:
    model: dict
    grid: dict
    ensemble: dict
    solver: dict = field(default_factory=dict)
    path: str = ""


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        raw = json.loads(text)
    else:
        raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - {"model", "grid", "ensemble", "solver"}
    if unknown:
        raise ConfigError(f"unknown top-level sections: {sorted(unknown)}")
    for section in ("model", "grid", "ensemble"):
        if section not in raw:
            raise ConfigError(f"missing required section: {section}")
    return RunConfig(model=dict(raw["model"]), grid=dict(raw["grid"]),
                     ensemble=dict(raw["ensemble"]),
                     solver=dict(raw.get("solver") or {}), path=str(path))


def _check_keys(section: dict, allowed: set, name: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")


def make_grid(cfg: RunConfig) -> TimeGrid:
    _check_keys(cfg.grid, GRID_KEYS, "grid")
    missing = GRID_KEYS - set(cfg.grid)
    if missing:
        raise ConfigError(f"missing keys in [grid]: {sorted(missing)}")
    g = cfg.grid
    return build_grid(float(g["T"]), int(g["n_uniform"]), int(g["n_refined"]),
                      float(g["ratio"]), float(g["epsilon_final"]))


def make_ensemble(cfg: RunConfig, grid: TimeGrid, seed_override=None):
    _check_keys(cfg.ensemble, ENSEMBLE_KEYS, "ensemble")
    missing = ENSEMBLE_KEYS - set(cfg.ensemble)
    if missing:
        raise ConfigError(f"missing keys in [ensemble]: {sorted(missing)}")
    e = cfg.ensemble
    seed = int(e["seed"]) if seed_override is None else int(seed_override)
    return simulate_ensemble(grid, int(e["m_common"]), int(e["m_idio"]), seed)


def make_picard_options(cfg: RunConfig) -> PicardOptions:
    _check_keys(cfg.solver, SOLVER_KEYS, "solver")
    s = cfg.solver
    opts = PicardOptions()
    if "tol" in s:
        opts.tol = float(s["tol"])
    if "max_iter" in s:
        opts.max_iter = int(s["max_iter"])
    if "damping" in s:
        opts.damping = float(s["damping"])
    if "alpha" in s and s["alpha"] is not None:
        opts.alpha = float(s["alpha"])
    if "nu" in s:
        opts.nu = float(s["nu"])
    if "basis_degree" in s:
        opts.basis_degree = int(s["basis_degree"])
    if "coupling_ramp" in s and s["coupling_ramp"]:
        opts.coupling_ramp = [float(w) for w in s["coupling_ramp"]]
    if "n_substeps" in s:
        opts.n_substeps = int(s["n_substeps"])
    return opts


def outer_options(cfg: RunConfig) -> dict:
    s = cfg.solver
    return {"outer_tol": float(s.get("outer_tol", 1e-8)),
            "outer_max_iter": int(s.get("outer_max_iter", 200)),
            "outer_damping": float(s.get("outer_damping", 0.3))}


def n_schedule(cfg: RunConfig) -> list:
    sched = cfg.solver.get("n_schedule")
    if not sched:
        raise ConfigError("this subcommand needs solver.n_schedule")
    return [float(n) for n in sched]


def make_riccati_model(cfg: RunConfig, grid: TimeGrid):
    from .riccati import RiccatiInput
    _check_keys(cfg.model, RICCATI_MODEL_KEYS, "model")
    m = cfg.model
    if "lambda1" not in m or "lambda4" not in m:
        raise ConfigError("riccati model needs lambda1 and lambda4")
    inp = RiccatiInput(
        lambda1=time_function_from_config(m["lambda1"]),
        lambda4=time_function_from_config(m["lambda4"]),
        T=grid.T,
        drift_linear=time_function_from_config(m.get("drift_linear", 0.0)))
    penalty = m.get("penalty")
    return inp, (float(penalty) if penalty is not None else None)


def make_coefficient_set(cfg: RunConfig, grid: TimeGrid) -> tuple:
    _check_keys(cfg.model, COEFF_MODEL_KEYS, "model")
    m = cfg.model
    if "lambda1" not in m or "lambda4" not in m:
        raise ConfigError("coefficient model needs lambda1 and lambda4")
    kwargs = {}
    for key in ("lambda1", "lambda2", "lambda3", "lambda4", "lambda5",
                "gamma", "zeta", "rho", "f_bar", "g_bar"):
        if key in m:
            kwargs[key] = time_function_from_config(m[key])
    coeffs = CoefficientSet(T=grid.T, chi=float(m.get("chi", 0.0)), **kwargs)
    penalty = m.get("penalty")
    return coeffs, (float(penalty) if penalty is not None else None)


def make_follower_model(cfg: RunConfig, grid: TimeGrid) -> FollowerModel:
    _check_keys(cfg.model, FOLLOWER_MODEL_KEYS, "model")
    m = cfg.model
    for key in ("eta", "kappa", "lambda", "x"):
        if key not in m:
            raise ConfigError(f"follower model needs key {key!r}")
    return FollowerModel(
        eta=time_function_from_config(m["eta"]),
        kappa=time_function_from_config(m["kappa"]),
        lam=time_function_from_config(m["lambda"]),
        g_tilde=time_function_from_config(m.get("g_tilde", 0.0)),
        x=float(m["x"]), T=grid.T)


def make_leader_model(cfg: RunConfig, grid: TimeGrid) -> LeaderModel:
    _check_keys(cfg.model, LEADER_MODEL_KEYS, "model")
    m = cfg.model
    needed = ("eta", "kappa", "lambda", "x", "eta0", "kappa0", "kappabar0",
              "lambda0", "lambdabar", "kappatilde0", "x0")
    for key in needed:
        if key not in m:
            raise ConfigError(f"leader model needs key {key!r}")
    follower = FollowerModel(
        eta=time_function_from_config(m["eta"]),
        kappa=time_function_from_config(m["kappa"]),
        lam=time_function_from_config(m["lambda"]),
        g_tilde=time_function_from_config(m.get("g_tilde", 0.0)),
        x=float(m["x"]), T=grid.T)
    return LeaderModel(
        eta0=time_function_from_config(m["eta0"]),
        kappa0=time_function_from_config(m["kappa0"]),
        kappabar0=time_function_from_config(m["kappabar0"]),
        lambda0=time_function_from_config(m["lambda0"]),
        lambdabar=time_function_from_config(m["lambdabar"]),
        kappatilde0=time_function_from_config(m["kappatilde0"]),
        x0=float(m["x0"]), follower=follower)


def is_leader_config(cfg: RunConfig) -> bool:
    return "eta0" in cfg.model
