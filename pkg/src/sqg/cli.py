"""Command line entry point: ``sqg <kind> --config FILE [--seed N] [--out DIR] [--threads N]``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure or blow-up,
3 failed verification.
"""
from __future__ import annotations

import argparse
import sys

from .integrate import ConfigError
from .io import KINDS, OUTPUT_ROOT_ENV, parse_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


def build_parser():
    ap = argparse.ArgumentParser(
        prog="sqg",
        description="Stochastic SQG simulator and verification harness.",
        epilog=f"Outputs go to --out, else ${OUTPUT_ROOT_ENV}/<kind>-seed<seed>, else ./sqg-runs/<kind>-seed<seed>.",
    )
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="YAML or JSON config, or a manifest.json from an earlier run")
    ap.add_argument("--seed", type=int, default=None, help="root seed (unsigned 64-bit); overrides the config")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for ensemble members")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        spec = parse_config(args.config, kind=args.kind)
        if args.seed is not None:
            spec = spec.with_seed(args.seed)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code, out = run_experiment(spec, args.out, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    status = {EXIT_OK: "ok", EXIT_RUNTIME: "runtime failure", EXIT_VERIFY: "verification failed"}[code]
    print(f"{spec.kind}: {status}; outputs in {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
