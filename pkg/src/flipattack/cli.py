"""Command line entry point: ``flipattack <command> --config f.yaml --out f.csv``."""

from __future__ import annotations

import argparse
import logging
import sys

from .channel import ParameterError
from .harness import RUNNERS, ConfigError, ExperimentConfig, write_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flipattack", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per SNR point")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML file of flat key: value settings")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", required=True, help="CSV output path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be non-negative")
            cfg.seed = args.seed
        rows = RUNNERS[args.command](cfg)
    except (ConfigError, ParameterError, OSError) as exc:
        print(f"flipattack: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_csv(rows, args.out)
    if any(r.note for r in rows):
        return EXIT_BUDGET
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
