"""Seeded Monte Carlo sweeps over SNR and estimators, with CSV output."""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..channel import Target, add_noise, synthesize
from ..crb import CrbError, crb
from ..dictionary import EstimationError, build_dictionaries, extract_estimates
from ..music import two_stage_solve
from ..sbl import VbiOptions
from ..two_layer import TwoLayerOptions, run_two_layer
from .baselines import (classical_vbi, fft_coarse_estimate, perfect_vbi_delay, perfect_vbi_doppler,
                        stacking_music_delays, summation_music_delays, _delay_only)
from .config import ScenarioConfig
from .scoring import match_and_score, worst_case_errors

CSV_HEADER = ("snr_db", "method", "mse_doppler_hz2", "mse_doppler_norm", "mse_delay_s2",
              "mse_delay_norm", "crb_doppler_hz2", "crb_delay_s2", "n_trials", "n_failed")


@dataclass
class MseRow:
    snr_db: float
    method: str
    mse_doppler_hz2: float
    mse_doppler_norm: float
    mse_delay_s2: float
    mse_delay_norm: float
    crb_doppler_hz2: float
    crb_delay_s2: float
    n_trials: int
    n_failed: int
    # not written to the CSV
    se_doppler_hz2: float = float("nan")
    se_delay_s2: float = float("nan")
    n_unconverged: int = 0
    max_iters: int = 0

    def csv_fields(self) -> list[str]:
        return [repr(float(self.snr_db)), self.method] + [
            repr(float(getattr(self, k))) for k in CSV_HEADER[2:8]] + [
            str(int(self.n_trials)), str(int(self.n_failed))]


@dataclass
class MethodOutcome:
    delay_s2: float
    doppler_hz2: float
    failed: bool = False
    converged: bool = True
    iters: int = 0


@dataclass
class TrialResult:
    trial: int
    outcomes: dict = field(default_factory=dict)     # (snr_idx, method) -> MethodOutcome
    crb_doppler_hz2: list = field(default_factory=list)   # per SNR
    crb_delay_s2: list = field(default_factory=list)


def draw_targets(cfg: ScenarioConfig, rng: np.random.Generator) -> list[Target]:
    """``L`` paths: gains CN(0, 1/L), uniform delays and Dopplers in range."""
    L = cfg.n_targets
    g = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) * np.sqrt(0.5 / L)
    tau = rng.uniform(0.0, cfg.delay_range_s, L)
    nu = rng.uniform(-cfg.doppler_range_hz, cfg.doppler_range_hz, L)
    return [Target(complex(g[l]), float(tau[l]), float(nu[l])) for l in range(L)]


def snr_to_noise_var(snr_db: float) -> float:
    """Unit mean channel power, so ``sigma^2 = 10^(-SNR/10)``."""
    return float(10.0 ** (-snr_db / 10.0))


def _options(cfg: ScenarioConfig):
    vb = VbiOptions(shape=cfg.gamma_shape, rate=cfg.gamma_rate, tol=cfg.vbi_tol, max_iter=cfg.vbi_max_iter)
    two = TwoLayerOptions(inner=vb.with_(max_iter=cfg.inner_max_iter), outer_tol=cfg.vbi_tol,
                          outer_max_iter=cfg.outer_max_iter, beta_mode=cfg.beta_mode)
    return vb, two


def estimate(method: str, channel, truth, dicts, cfg: ScenarioConfig):
    """Run one estimator.  Returns ``(estimates, converged, iterations)``."""
    vb, two = _options(cfg)
    L = cfg.n_targets
    system = dicts.config
    if method == "two_layer":
        tensor, diag = run_two_layer(channel, dicts, two)
        est, _ = extract_estimates(tensor, L, channel=channel)
        iters = max([diag.outer_iter] + list(diag.inner_iters))
        return est, diag.converged and all(diag.inner_converged), iters
    if method == "two_stage":
        est, info = two_stage_solve(channel, dicts, L, vb)
        return est, info.converged, info.vbi_iters
    if method == "fft_coarse":
        return fft_coarse_estimate(channel, system, L), True, 0
    if method == "perfect_vbi_delay":
        est, st = perfect_vbi_delay(channel, dicts, truth, vb)
        return est, st.converged, st.iter_count
    if method == "perfect_vbi_doppler":
        est, st = perfect_vbi_doppler(channel, dicts, truth, vb)
        return est, st.converged, st.iter_count
    if method == "classical_vbi":
        est, st = classical_vbi(channel, dicts, L, vb)
        return est, st.converged, st.iter_count
    if method == "summation_music":
        return _delay_only(summation_music_delays(channel, dicts, system, L, cfg.summation_variant)), True, 0
    if method == "stacking_music":
        return _delay_only(stacking_music_delays(channel, dicts, system, L)), True, 0
    raise ValueError(f"unknown method {method!r}")


def run_trial(cfg: ScenarioConfig, trial: int) -> TrialResult:
    """All SNR points and methods for one seeded target draw.

    Targets come from ``default_rng([seed, trial])`` and the noise of SNR
    point ``i`` from ``default_rng([seed, trial, i])``, so results do not
    depend on which worker runs the trial.
    """
    system = cfg.system
    dicts = build_dictionaries(system, cfg.grid_delay, cfg.grid_doppler, cfg.delay_range_s)
    truth = draw_targets(cfg, np.random.default_rng([cfg.seed, trial]))
    clean = synthesize(system, truth)
    pen_t, pen_v = worst_case_errors(system, cfg.delay_range_s, cfg.doppler_range_hz)
    res = TrialResult(trial)
    unit_crb = None
    if cfg.compute_crb:
        try:
            unit_crb = crb(system, truth, 1.0, pilots="identity")
        except CrbError:
            unit_crb = None
    for i, snr in enumerate(cfg.snr_db):
        s2 = snr_to_noise_var(snr)
        ch = add_noise(clean, s2, np.random.default_rng([cfg.seed, trial, i]))
        if unit_crb is None:
            res.crb_doppler_hz2.append(np.nan)
            res.crb_delay_s2.append(np.nan)
        else:
            res.crb_doppler_hz2.append(float(np.mean(unit_crb.doppler_hz2)) * s2)
            res.crb_delay_s2.append(float(np.mean(unit_crb.delay_s2)) * s2)
        for m in cfg.methods:
            try:
                est, conv, iters = estimate(m, ch, truth, dicts, cfg)
            except EstimationError:
                delay_only = m in ("summation_music", "stacking_music")
                res.outcomes[(i, m)] = MethodOutcome(pen_t, np.nan if delay_only else pen_v, failed=True)
                continue
            e = match_and_score(truth, est, system, cfg.delay_range_s, cfg.doppler_range_hz)
            res.outcomes[(i, m)] = MethodOutcome(float(np.mean(e.delay_s2)), float(np.mean(e.doppler_hz2)),
                                                 False, bool(conv), int(iters))
    return res


def _worker_count(n_trials: int, workers=None) -> int:
    if workers is None:
        env = os.environ.get("SENSE_THREADS")
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise ValueError(f"SENSE_THREADS must be an integer, got {env!r}") from None
        else:
            workers = os.cpu_count() or 1
    return max(1, min(int(workers), n_trials))


def _run_trial_args(args):
    return run_trial(*args)


def run_trials(cfg: ScenarioConfig, workers=None) -> list[TrialResult]:
    """Every trial, in trial order.  ``SENSE_THREADS`` caps the pool size."""
    n = _worker_count(cfg.n_trials, workers)
    jobs = [(cfg, t) for t in range(cfg.n_trials)]
    if n == 1:
        return [run_trial(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_run_trial_args, jobs, chunksize=max(1, len(jobs) // (4 * n))))


def aggregate(cfg: ScenarioConfig, trials: list[TrialResult]) -> list[MseRow]:
    """Per (SNR, method) averages over trials, in trial order."""
    system = cfg.system
    T0, f0 = system.sample_period_s, system.subcarrier_spacing_hz
    rows = []
    n = len(trials)
    for i, snr in enumerate(cfg.snr_db):
        crb_v = np.array([t.crb_doppler_hz2[i] for t in trials])
        crb_t = np.array([t.crb_delay_s2[i] for t in trials])
        ok = np.isfinite(crb_v) & np.isfinite(crb_t)
        cv = float(np.mean(crb_v[ok])) if ok.any() else float("nan")
        ct = float(np.mean(crb_t[ok])) if ok.any() else float("nan")
        for m in cfg.methods:
            outs = [t.outcomes[(i, m)] for t in trials]
            dv = np.array([o.doppler_hz2 for o in outs])
            dt = np.array([o.delay_s2 for o in outs])
            mv, mt = float(np.mean(dv)), float(np.mean(dt))
            rows.append(MseRow(
                float(snr), m, mv, mv / f0 ** 2, mt, mt / T0 ** 2, cv, ct, n,
                sum(o.failed for o in outs),
                float(np.std(dv, ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
                float(np.std(dt, ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
                sum(not o.converged for o in outs), max(o.iters for o in outs)))
    return rows


def run_sweep(cfg: ScenarioConfig, workers=None) -> list[MseRow]:
    return aggregate(cfg, run_trials(cfg, workers))


def rows_to_csv(rows: list[MseRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def write_csv(rows: list[MseRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows))
