"""Command-line entry point.

    cbve run <config>       run a sweep (config file or builtin scenario name)
    cbve validate <config>  admissibility check only
    cbve scenarios          list builtin scenarios

Exit codes: 0 success, 2 validation failure, 3 solver failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config, resolve_output_dir
from .environment import validate_admissible
from .errors import (CbveError, ConfigError, LevelTooSmallError,
                     NegativeCumulantError, NonConvergenceError)
from .report import EXIT_OK, EXIT_SOLVER, EXIT_VALIDATION, run_experiment
from .scenarios import list_builtin_scenarios


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="path to a YAML config, or a builtin scenario name")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="override the MC seed")
    p.add_argument("--threads", type=int, default=None, help="worker pool size")
    p.add_argument("--tol", type=float, default=None, help="override the solver tolerance")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cbve",
                                     description="CBVE scaling-limit laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run the full sweep"))
    vp = sub.add_parser("validate", help="validate the environment only")
    vp.add_argument("config")
    sub.add_parser("scenarios", help="list builtin scenarios")
    args = parser.parse_args(argv)

    if args.command == "scenarios":
        for name in list_builtin_scenarios():
            print(name)
        return EXIT_OK

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    if args.command == "validate":
        report = validate_admissible(cfg.env)
        if report.admissible:
            print(f"{cfg.name}: admissible")
            return EXIT_OK
        for v in report.violations:
            print(f"{cfg.name}: condition {v.condition} violated at {v.where}: "
                  f"{v.detail}", file=sys.stderr)
        return EXIT_VALIDATION

    if args.seed is not None:
        cfg.mc.seed = args.seed
    if args.tol is not None:
        cfg.solver_tol = args.tol
    if args.no_figures:
        cfg.figures = False
    out_dir = resolve_output_dir(cfg, args.out)
    try:
        result = run_experiment(cfg, out_dir, threads=args.threads)
    except (NegativeCumulantError, NonConvergenceError) as exc:
        print(f"solver failure in cumulant.solve_backward: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except LevelTooSmallError as exc:
        print(f"solver failure in discrete.build_discrete_model: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except CbveError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if result.exit_code != EXIT_OK:
        print(result.message, file=sys.stderr)
    else:
        print(f"{cfg.name}: wrote {result.out_dir}/report.json, errors.csv, mc.csv")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
