"""Command line entry point.

    sdheat <suite> [--config PATH] [--seed INT] [--out DIR] [--jobs INT] [--dump]

Suites: check-calculus, weights, simulate, hum-linear, hum-semilinear,
carleman-check, decay-sweep.  Exit status is 0 iff every contract of the suite
passed; the failing check is named in summary.txt and on stderr.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .suites import SUITES, run_suite


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdheat",
        description="Experiment suites for null control of the semi-discrete "
                    "stochastic heat equation.")
    parser.add_argument("suite", choices=sorted(SUITES),
                        help="which suite to run")
    parser.add_argument("--config", default=None, metavar="PATH",
                        help="config file (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", default=None, metavar="DIR",
                        help="output directory (default from config)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker processes for independent tasks")
    parser.add_argument("--dump", action="store_true",
                        help="also write bulk CSV dumps (weights, trajectories)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    out_dir = args.out if args.out is not None else cfg.out_dir
    outcome = run_suite(args.suite, cfg, out_dir, jobs=args.jobs,
                        dump=args.dump)
    for line in outcome.summary_lines():
        print(line)
    if not outcome.passed:
        failing = [n for n, ok, _ in outcome.checks if not ok]
        print(f"failed checks: {', '.join(failing)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
