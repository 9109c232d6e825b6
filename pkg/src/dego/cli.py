"""Command-line front end: ``dego run|eval|optimum``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from .bench import ConfigError, run_benchmark
from .problems import PROBLEMS, get_problem

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dego", description="EGO with GP, warped-GP and deep-GP surrogates.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark study from a config file")
    run.add_argument("config")
    run.add_argument("--out-dir", default="results")
    run.add_argument("--jobs", type=int, default=1, help="repetitions run in parallel")
    run.add_argument("--seed", type=int, default=None, help="override the config's base seed")

    ev = sub.add_parser("eval", help="evaluate a problem at a unit-box point")
    ev.add_argument("problem", choices=sorted(PROBLEMS))
    ev.add_argument("x", nargs="+", type=float)

    opt = sub.add_parser("optimum", help="grid-oracle optimum of a problem")
    opt.add_argument("problem", choices=sorted(PROBLEMS))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "eval":
        problem = get_problem(args.problem)
        if len(args.x) != problem.dim:
            print(f"error: {problem.name} takes {problem.dim} coordinates", file=sys.stderr)
            return EXIT_CONFIG
        x = np.asarray(args.x, dtype=float)
        if np.any(x < 0) or np.any(x > 1):
            print("error: coordinates must lie in [0, 1]", file=sys.stderr)
            return EXIT_CONFIG
        f, g = problem.evaluate(x[None, :])
        parts = [f"objective={float(f[0])!r}"] + [f"constraint{j}={float(v)!r}" for j, v in enumerate(g[0])]
        print(" ".join(parts))
        return EXIT_OK

    if args.command == "optimum":
        value, x = get_problem(args.problem).optimum
        print(f"value={value!r} x={' '.join(repr(float(v)) for v in x)}")
        return EXIT_OK

    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        results = run_benchmark(args.config, args.out_dir, jobs=args.jobs, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for label, s in results:
        print(f"{label}: mean_best={s.mean_best:.6g} variance={s.variance:.3g} success={s.success_pct:.0f}%")
    failed = [(label, r.seed, r.error) for label, s in results for r in s.records if r.failed]
    for label, seed, err in failed:
        print(f"training failure: {label} seed {seed}: {err}", file=sys.stderr)
    return EXIT_TRAINING if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
