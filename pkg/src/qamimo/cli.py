"""Command-line entry point: ``qamimo run <spec-file>``."""

from __future__ import annotations

import argparse
import logging
import sys

from .rmt import ConvergenceError
from .runner import load_spec, run, validate
from .scenario import ConfigError

EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qamimo", description="Quantized massive MIMO uplink experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run an experiment file"), ("validate", "check an experiment file")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("spec_file")
        c.add_argument("--seed", type=int, default=None, help="override the seed in the file")
        c.add_argument("--threads", type=int, default=1, help="worker threads over drops")
        c.add_argument("--paper-scale", action="store_true",
                       help="3x3 cells, K=5, M=30 and 100x100 trials unless the file overrides them")
        c.add_argument("--out", default="results", help="output directory")
        c.add_argument("--dry-run", action="store_true", help="validate and print derived quantities only")
        c.add_argument("-v", "--verbose", action="store_true")
    return p


def _print_validation(info: dict) -> None:
    print(f"tau_p = {info['tau_p']}, tau_u = {info['tau_u']}, prelog = {info['prelog']:.4f}")
    print(f"noise power = {info['sigma2_w']:.4e} W")
    if "pilot_groups" in info:
        print(f"pilot groups per cell: {info['pilot_groups']}")
        print(f"pilot index per user: {info['pilot_index']}")
    for b, a in info["alpha"].items():
        print(f"alpha(b={b}) = {a:.6f}")
    for msg in info["problems"]:
        print(f"error: {msg}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        spec = load_spec(args.spec_file, paper_scale=args.paper_scale, seed=args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dry_run or args.command == "validate":
        info = validate(spec)
        _print_validation(info)
        return EXIT_CONFIG if info["problems"] else 0
    try:
        paths = run(spec, out_dir=args.out, threads=args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    for p in paths:
        print(f"wrote {p}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
