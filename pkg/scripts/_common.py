"""Shared helpers for the figure scripts: run a scenario, write its CSV, print a table."""
import argparse
from pathlib import Path

from tvsense.bench.config import load_config
from tvsense.bench.scoring import grid_floor
from tvsense.bench.sweep import run_sweep, write_csv
from tvsense.dictionary import build_dictionaries


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--trials", type=int, default=None, help="override n_trials")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--outdir", default="results")
    return p


def run(preset: str, name: str, args, **overrides):
    cfg = load_config(preset=preset, n_trials=args.trials, seed=args.seed, **overrides)
    rows = run_sweep(cfg)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / f"{name}.csv")
    d = build_dictionaries(cfg.system, cfg.grid_delay, cfg.grid_doppler, cfg.delay_range_s)
    ft, fv = grid_floor(d)
    T0, f0 = cfg.system.sample_period_s, cfg.subcarrier_spacing_hz
    print(f"# {name}: grid floor {ft / T0 ** 2:.2e} T0^2, {fv / f0 ** 2:.2e} f0^2")
    print(f"{'snr':>5} {'method':<20} {'dop/f0^2':>10} {'del/T0^2':>10} {'crb dop':>10} {'failed':>6}")
    for r in rows:
        print(f"{r.snr_db:5.1f} {r.method:<20} {r.mse_doppler_norm:10.4g} {r.mse_delay_norm:10.4g} "
              f"{r.crb_doppler_hz2 / f0 ** 2:10.3g} {r.n_failed:6d}")
    return rows
