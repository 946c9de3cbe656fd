"""Command-line entry point: ``sense bench``."""
from __future__ import annotations

import argparse
import sys

from .bench.config import PRESETS, ConfigError, load_config, parse_snr
from .bench.sweep import _worker_count, rows_to_csv, run_sweep, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATOR = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sense", description="Delay-Doppler sensing benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)
    b = sub.add_parser("bench", help="Monte Carlo MSE sweep; writes one CSV row per (SNR, method).")
    b.add_argument("--config", help="key = value scenario file")
    b.add_argument("--preset", choices=sorted(PRESETS), help="start from a named scenario")
    b.add_argument("--snr", help="min:step:max in dB, or a comma list")
    b.add_argument("--methods", help="comma-separated estimator names")
    b.add_argument("--trials", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--out", help="CSV path (default: stdout)")
    return p


def _bench(args) -> int:
    try:
        if args.config is None and args.preset is None:
            raise ConfigError("give --config, --preset or both")
        cfg = load_config(
            args.config, args.preset,
            snr_db=parse_snr(args.snr) if args.snr else None,
            methods=tuple(m.strip() for m in args.methods.split(",") if m.strip()) if args.methods else None,
            n_trials=args.trials, seed=args.seed)
        workers = _worker_count(cfg.n_trials)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = run_sweep(cfg, workers)
    except Exception as exc:  # any hard estimator failure aborts the sweep
        print(f"estimator error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    if args.out:
        write_csv(rows, args.out)
    else:
        sys.stdout.write(rows_to_csv(rows))
    unconverged = sum(r.n_unconverged for r in rows)
    if unconverged:
        print(f"note: {unconverged} estimator runs stopped at their iteration cap", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "bench":
        return _bench(args)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
