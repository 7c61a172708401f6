"""
Command line: `roughfield run | fit-rate | kolmogorov | list-scenarios`.
"""
from __future__ import annotations
from typing import List, Optional
import argparse
import json
import logging
import sys

from .diagnostics import convergence_rate, iterated_remainder_samples, kolmogorov_scaling_fit, load_samples
from .errors import InsufficientDataError
from .grid import dyadic_grid
from .noise import as_generator, sample_brownian
from .reports import read_rate_table
from .scenarios import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, SCENARIOS, run_scenario

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roughfield",
                                     description="Numerical checks of rough and rough stochastic calculus identities.")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file and write its reports")
    run.add_argument("config", help="scenario JSON file")
    run.add_argument("--seed", type=int, default=None, help="override the configured master seed")
    run.add_argument("--workers", type=int, default=1, help="worker processes over replicas")
    run.add_argument("--out", default="reports", help="output directory for CSV and JSON reports")

    fit = sub.add_parser("fit-rate", help="fit log residual against log mesh from a CSV table")
    fit.add_argument("csv", help="table with a header row; first column mesh, second residual")
    fit.add_argument("--min-points", type=int, default=3)

    kol = sub.add_parser("kolmogorov", help="moment-scaling exponent of saved or generated samples")
    kol.add_argument("samples", nargs="?", default=None, help="directory of saved GridPath/TwoParamGrid samples")
    kol.add_argument("--level", type=int, required=True, choices=[1, 2, 3])
    kol.add_argument("--q", type=float, required=True, help="moment order, at least the level")
    kol.add_argument("--example", choices=["brownian", "remainder"], default=None,
                     help="generate samples instead of loading them")
    kol.add_argument("--count", type=int, default=1000, help="number of generated samples")
    kol.add_argument("--grid-level", type=int, default=10, help="dyadic level of generated samples")
    kol.add_argument("--seed", type=int, default=0)

    sub.add_parser("list-scenarios", help="list registered scenarios with their options")
    return parser


def _fit_rate(args) -> int:
    meshes, residuals = read_rate_table(args.csv)
    fit = convergence_rate(meshes, residuals, min_points=args.min_points)
    print(json.dumps(fit.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _kolmogorov(args) -> int:
    if args.example == "brownian":
        rng = as_generator(args.seed)
        grid = dyadic_grid(args.grid_level)
        samples = [sample_brownian(grid, 1, rng) for _ in range(args.count)]
    elif args.example == "remainder":
        samples = iterated_remainder_samples(args.count, args.grid_level, args.seed)
    elif args.samples is not None:
        samples = load_samples(args.samples)
    else:
        print("kolmogorov: give a samples directory or --example", file=sys.stderr)
        return EXIT_CONFIG
    fit = kolmogorov_scaling_fit(samples, args.level, args.q)
    print(json.dumps({"level": args.level, "q": args.q, "samples": len(samples), **fit.to_dict()},
                     indent=2, sort_keys=True))
    return EXIT_OK


def _list_scenarios() -> int:
    for name in sorted(SCENARIOS):
        scenario = SCENARIOS[name]
        print(f"{name}: {scenario.description}")
        print(f"    fields: required {list(scenario.required_fields)}, optional {list(scenario.optional_fields)}")
        print(f"    drivers: {list(scenario.drivers)}, lifts: {list(scenario.lifts)}")
        print(f"    options: {json.dumps(scenario.defaults, sort_keys=True)}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return run_scenario(args.config, args.out, args.seed, args.workers)
        if args.command == "fit-rate":
            return _fit_rate(args)
        if args.command == "kolmogorov":
            return _kolmogorov(args)
        return _list_scenarios()
    except InsufficientDataError as exc:
        logger.error("%s", exc)
        return EXIT_FAIL
    except (OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
