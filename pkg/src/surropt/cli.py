"""Command-line entry point: ``surropt run|validate|gen-data``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, validate_config
from .data import generate_simulated, save_csv
from .experiments import run_experiment

DATA_KINDS = ("simulated",)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="surropt", description="Metric optimization through surrogate profiles.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("-o", "--output", help="output directory (overrides the config)")

    val = sub.add_parser("validate", help="check a config and list every problem")
    val.add_argument("config")

    gen = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    gen.add_argument("kind", choices=DATA_KINDS)
    gen.add_argument("out")
    gen.add_argument("--n", type=int, default=5000)
    gen.add_argument("--positive-frac", type=float, default=0.10)
    gen.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gen-data":
        try:
            ds = generate_simulated(args.n, args.positive_frac, args.seed)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        save_csv(ds, args.out)
        print(f"wrote {ds.n} rows to {args.out}")
        return 0
    try:
        cfg = validate_config(args.config)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"{args.config}: {err}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.experiment})")
        return 0
    if args.output:
        cfg.output = args.output
    report = run_experiment(cfg)
    print(report.table())
    if cfg.output:
        print(f"\nreport written to {cfg.output}/report.csv")
    return 1 if report.failures else 0


if __name__ == "__main__":
    sys.exit(main())
