"""Command-line entry point: ``cavityspin <subcommand> --config <path> [--out <dir>] [--workers k]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import SUBCOMMANDS, parse_config
from .errors import InvalidParameterError
from .runner import EXIT_VALIDATION, WORKERS_ENV, run_subcommand


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cavityspin",
        description="Driven-dissipative collective spin simulations.",
        epilog=f"Worker count precedence: --workers, then ${WORKERS_ENV}, then the config. "
        "Exit codes: 0 success, 2 validation error, 3 numerical failure.",
    )
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    ap.add_argument("--workers", type=int, default=None, help="worker processes for sweeps")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which matches the validation exit code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config)
    except InvalidParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    res = run_subcommand(args.subcommand, cfg, args.out, args.workers)
    if res.exit_code:
        print(f"error: {res.message}", file=sys.stderr)
    else:
        print(f"wrote {len(res.files)} files to {res.out_dir}")
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
