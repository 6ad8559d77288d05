"""``sticky-hydro <experiment> --config FILE [--seed S] [--out DIR]``.

Exit status: 0 when every check passes, 1 when a check fails, 2 on a
configuration or usage error.
"""

import argparse
import sys

from .. import __version__
from ..particles import WORKERS_ENV
from .config import EXPERIMENTS, ConfigError, parse_config
from .experiments import CHECKS, run_experiment


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sticky-hydro",
        description="Exclusion with mean-field reservoirs: hydrodynamic and chaos experiments.",
        epilog=f"Worker processes for Monte Carlo runs: ${WORKERS_ENV} (default: all CPUs).",
    )
    parser.add_argument("experiment", nargs="?", choices=EXPERIMENTS)
    parser.add_argument("--config", metavar="FILE", help="key = value configuration file")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--out", metavar="DIR", help="override output_dir")
    parser.add_argument("--list-checks", action="store_true", help="list the checks of each experiment")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def list_checks(experiment=None, stream=None):
    stream = sys.stdout if stream is None else stream
    for name in EXPERIMENTS:
        if experiment and name != experiment:
            continue
        stream.write(f"{name}\n")
        for check, desc in CHECKS[name].items():
            stream.write(f"  {check:<24} {desc}\n")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list_checks:
        list_checks(args.experiment)
        return 0
    if args.experiment is None and args.config is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("sticky-hydro: error: an experiment or --config is required\n")
        return 2
    overrides = {"experiment": args.experiment, "seed": args.seed, "output_dir": args.out}
    try:
        cfg = parse_config(args.config, overrides)
        report = run_experiment(cfg)
    except ConfigError as exc:
        sys.stderr.write(f"sticky-hydro: config error: {exc}\n")
        return 2
    paths = report.write(cfg.output_dir)
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        sys.stdout.write(f"{status}  {cfg.experiment}:{c.name}  value={c.value:.4g}  threshold={c.threshold:.4g}\n")
    sys.stdout.write(f"results: {paths['rows']}\n")
    return 0 if report.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
