"""Experiment configuration: a single human-readable YAML tree.

The schema mirrors the built-in scenarios (see ``configs/`` for one
annotated example per scenario).  ``load_config`` parses and validates;
structural problems raise ``ConfigError`` so the CLI can exit with the
validation status code.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .environment import EnvironmentSpec, environment_from_dict
from .errors import ConfigError
from .scenarios import builtin_config, list_builtin_scenarios


@dataclass
class McSettings:
    enabled: bool = True
    replicates: int = 100000
    x0: float = 1.0
    seed: int = 20240801
    t_list: list[float] = field(default_factory=lambda: [0.5, 1.0])
    lambda_list: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])


@dataclass
class ExperimentConfig:
    name: str
    env: EnvironmentSpec
    horizon: float
    lam_a: float
    lam_b: float
    lam_grid_size: int
    r_grid_size: int
    t_grid: list[float]
    k_list: list[int]
    theta: float
    eta_t: float
    solver_tol: float
    mc: McSettings
    output_dir: Path
    threads: int = 1
    figures: bool = True
    raw: dict = field(default_factory=dict)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def config_from_dict(data: dict, name: str = "experiment") -> ExperimentConfig:
    try:
        env = environment_from_dict({"horizon": data["horizon"], **data["environment"]})
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad environment: {exc}") from exc
    lam = data.get("lambda_range", {})
    a = float(lam.get("a", 0.5))
    b = float(lam.get("b", 2.0))
    _require(0.0 < a < b, f"lambda range needs 0 < a < b, got [{a}, {b}]")
    horizon = float(data["horizon"])
    _require(horizon > 0.0, "horizon must be positive")
    k_list = [int(k) for k in data.get("k_list", [50, 200, 800])]
    _require(len(k_list) > 0, "k_list must be nonempty")
    _require(k_list == sorted(k_list) and len(set(k_list)) == len(k_list),
             "k_list must be strictly increasing")
    _require(min(k_list) >= 1, "levels must be >= 1")
    t_grid = [float(t) for t in data.get("t_grid", [horizon])]
    _require(all(0.0 < t <= horizon for t in t_grid), "t_grid must lie in (0, horizon]")
    theta = float(data.get("theta", 0.5))
    _require(0.0 < theta < 1.0, "theta must be in (0, 1)")
    eta_t = float(data.get("eta_t", 2.0))
    _require(eta_t > 1.0, "eta_t must exceed 1")
    tol = float(data.get("solver_tol", 1.0e-10))
    _require(0.0 < tol <= 1.0e-4, "solver_tol must be in (0, 1e-4]")
    mc_raw = data.get("mc", {})
    mc = McSettings(
        enabled=bool(mc_raw.get("enabled", True)),
        replicates=int(mc_raw.get("replicates", 100000)),
        x0=float(mc_raw.get("x0", 1.0)),
        seed=int(mc_raw.get("seed", 20240801)),
        t_list=[float(t) for t in mc_raw.get("t_list", [0.5, 1.0])],
        lambda_list=[float(x) for x in mc_raw.get("lambda_list", [0.5, 1.0, 2.0])],
    )
    _require(mc.replicates >= 100, "mc.replicates must be >= 100")
    _require(all(0.0 <= t <= horizon for t in mc.t_list), "mc.t_list outside [0, T]")
    out = Path(data.get("output_dir", f"out/{data.get('name', name)}"))
    return ExperimentConfig(
        name=str(data.get("name", name)),
        env=env,
        horizon=horizon,
        lam_a=a,
        lam_b=b,
        lam_grid_size=int(lam.get("grid", 7)),
        r_grid_size=int(data.get("r_grid", 17)),
        t_grid=t_grid,
        k_list=k_list,
        theta=theta,
        eta_t=eta_t,
        solver_tol=tol,
        mc=mc,
        output_dir=out,
        threads=int(data.get("threads", 1)),
        figures=bool(data.get("figures", True)),
        raw=data,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse a YAML experiment file, or a builtin scenario by name."""
    p = Path(path)
    if not p.exists() and str(path) in list_builtin_scenarios():
        return config_from_dict(builtin_config(str(path)), name=str(path))
    try:
        with open(p) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found and not a builtin scenario")
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} does not contain a mapping")
    return config_from_dict(data, name=p.stem)


def resolve_output_dir(cfg: ExperimentConfig, override: str | None) -> Path:
    """Output directory priority: CLI flag, CBVE_OUT env var, config value."""
    if override:
        return Path(override)
    env_dir = os.environ.get("CBVE_OUT")
    if env_dir:
        return Path(env_dir) / cfg.name
    return cfg.output_dir
