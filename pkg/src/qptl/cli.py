"""Command line entry point: ``qptl <experiment> --config FILE [--out DIR] [--workers N]``."""
from __future__ import annotations

import argparse
import logging
import sys

from .harness import KINDS, BudgetExceeded, ParseError, ValidationError, parse_config, run_experiment

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qptl", description="Quasiperiodic transfer-matrix and transport lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: QPTL_WORKERS or config)")
        p.add_argument("-q", "--quiet", action="store_true", help="suppress progress lines")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    try:
        cfg = parse_config(args.config)
        if cfg.experiment != args.command:
            raise ValidationError([f"config experiment '{cfg.experiment}' does not match subcommand '{args.command}'"])
    except (ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        manifest, paths = run_experiment(cfg, args.out, args.workers)
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(paths["csv"])
    if manifest.failed:
        print(f"{manifest.failed} of {len(manifest.tasks)} tasks failed; see {paths['manifest']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
