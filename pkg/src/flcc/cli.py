"""Command-line entry point: ``flcc net-analyze | fl-run | compare``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import commands
from .config import ExperimentConfig, parse_config
from .errors import (ConfigError, FlccError, FormatError, InsufficientDataError, InvalidInputError)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be >= 0", key="seed")
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flcc", description="Federated learning over clustered CSMA/CA.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    net = sub.add_parser("net-analyze", help="success probability and capacity curves")
    fl = sub.add_parser("fl-run", help="run federated training over the simulated network")
    for p in (net, fl):
        p.add_argument("--config", help="key = value configuration file (defaults if omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the configured seed")
    fl.add_argument("--mode", choices=("flcc", "baseline"), help="override mac.mode")

    cmp_ = sub.add_parser("compare", help="overlay round logs of finished runs")
    cmp_.add_argument("run_dirs", nargs="+")
    cmp_.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "net-analyze":
            art = commands.cmd_net_analyze(_load(args), args.out)
        elif args.command == "fl-run":
            art = commands.cmd_fl_run(_load(args), args.out, args.mode)
        else:
            art = commands.cmd_compare(args.run_dirs, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, InsufficientDataError, InvalidInputError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FlccError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in art.files:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
