"""Command line entry point: ``ccmaes bench ...`` and ``ccmaes viapoint ...``.

Exit codes: 0 success, 1 bad arguments, 2 I/O failure, 3 all runs diverged.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import METHODS, PROBLEMS, ExperimentConfig, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ccmaes", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--method", choices=sorted(METHODS), default="ccmaes")
    common.add_argument("--aggressive", action="store_true",
                        help="exploit the surrogate early (lambda'=10 lambda, n_start=100)")
    common.add_argument("--generations", type=int, required=True)
    common.add_argument("--runs", type=int, default=20)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--lambda-prime", type=int)
    common.add_argument("--n-start", type=float)
    common.add_argument("--c-pow", type=float, default=1.0)
    common.add_argument("--n-iter", type=int, default=1000)
    common.add_argument("--jobs", type=int, default=1, help="parallel runs")
    common.add_argument("--out", type=Path, required=True, help="output directory")

    bench = sub.add_parser("bench", parents=[common], help="contextual benchmark function")
    bench.add_argument("--problem", choices=[p for p in PROBLEMS if p != "viapoint"],
                       required=True)
    bench.add_argument("--n", type=int, default=20)
    bench.add_argument("--ns", type=int, default=1)
    bench.add_argument("--lambda", dest="lam", type=int, default=50)
    bench.add_argument("--sigma0", type=float)

    via = sub.add_parser("viapoint", parents=[common], help="2D viapoint DMP task")
    via.add_argument("--lambda", dest="lam", type=int, default=100)
    return parser


def config_from_args(args) -> ExperimentConfig:
    shared = dict(method=args.method, aggressive=args.aggressive, lam=args.lam,
                  lambda_prime=args.lambda_prime, n_start=args.n_start, c_pow=args.c_pow,
                  n_iter=args.n_iter, generations=args.generations, runs=args.runs,
                  base_seed=args.seed, out=args.out)
    if args.command == "viapoint":
        return ExperimentConfig(problem="viapoint", **shared)
    return ExperimentConfig(problem=args.problem, n=args.n, n_s=args.ns,
                            sigma0=args.sigma0, **shared)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
    except ValueError as exc:
        print(f"ccmaes: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        result = run_experiment(config, jobs=args.jobs)
    except OSError as exc:
        print(f"ccmaes: cannot write results to {args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    table = result.table
    print(f"{config.problem} {config.label}: final mean {table.final_mean:.4g} "
          f"over {table.n_runs} runs after {len(table.mean)} generations")
    if result.all_diverged:
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
