"""Command line entry point: ``rates <experiment> [flags]``.

Subcommands map one-to-one onto the experiment registry, plus ``all``.
Global flags: --config PATH, --seed U64, --threads N, --out DIR, --strict.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError
from .harness import EXPERIMENTS, default_config, load_config, run_experiment

_SUBCOMMANDS = ["empirical-w1", "vanishing-viscosity", "cole-hopf", "coupon",
                "supconv-check", "mfc-gap", "project-check", "all"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rates",
        description="Convergence-rate experiments for the mean-field-control "
                    "laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment(s)")
        p.add_argument("--config", default=None,
                       help="INI or JSON config file overriding defaults")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--threads", type=int, default=1,
                       help="concurrent cells")
        p.add_argument("--out", default="rates-out", help="output directory")
        p.add_argument("--strict", action="store_true",
                       help="per-cell failures become fatal")
    return parser


def _one(name: str, args) -> int:
    if args.config is not None:
        cfg = load_config(args.config)
        if cfg.experiment != name:
            raise ConfigError(
                f"config names experiment {cfg.experiment!r}, "
                f"but the subcommand is {name!r}")
        cfg.seed = args.seed
        cfg.threads = args.threads
        cfg.out_dir = args.out
        cfg.strict = args.strict
    else:
        cfg = default_config(name, seed=args.seed, threads=args.threads,
                             out_dir=args.out, strict=args.strict)
    return run_experiment(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "all":
            worst = 0
            for name in EXPERIMENTS:
                worst = max(worst, _one(name, args))
            return worst
        return _one(args.command, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
