"""Truth-to-estimate association and per-target squared errors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..channel import SystemConfig, Target
from ..dictionary import Estimate


@dataclass
class TrialErrors:
    """Squared errors per true target, in s^2 and Hz^2.

    Doppler errors are ``nan`` for delay-only estimators.
    """

    delay_s2: np.ndarray
    doppler_hz2: np.ndarray
    n_missing: int = 0


def doppler_difference(a_hz, b_hz, config: SystemConfig):
    """``a - b``, taken modulo the Doppler period when Doppler is periodic."""
    d = np.asarray(a_hz, dtype=float) - np.asarray(b_hz, dtype=float)
    if config.periodic_doppler:
        P = config.doppler_period_hz
        d = np.mod(d + P / 2, P) - P / 2
    return d


def worst_case_errors(config: SystemConfig, delay_range_s: float, doppler_range_hz: float):
    """Penalty ``(delay s^2, doppler Hz^2)`` charged for a missing estimate.

    The largest error any estimate inside the search region can make.
    """
    span = 2.0 * doppler_range_hz
    if config.periodic_doppler:
        span = min(span, config.doppler_period_hz / 2)
    return delay_range_s ** 2, span ** 2


def match_and_score(truth: list[Target], est: list[Estimate], config: SystemConfig,
                    delay_range_s: float, doppler_range_hz: float) -> TrialErrors:
    """Minimum-cost assignment on ``(dtau/T0)^2 + (dnu/f0)^2``.

    Unmatched truths are charged :func:`worst_case_errors`.
    """
    if len(est) > len(truth):
        raise ValueError(f"{len(est)} estimates for {len(truth)} targets")
    T0, f0 = config.sample_period_s, config.subcarrier_spacing_hz
    pen_t, pen_v = worst_case_errors(config, delay_range_s, doppler_range_hz)
    L = len(truth)
    dt2 = np.full(L, pen_t)
    dv2 = np.full(L, pen_v)
    if est:
        tt = np.array([t.delay_s for t in truth])
        tv = np.array([t.doppler_hz for t in truth])
        et = np.array([e.delay_s for e in est])
        ev = np.array([e.doppler_hz for e in est])
        delay_only = np.all(np.isnan(ev))
        Et = (tt[:, None] - et[None, :]) ** 2
        Ev = np.zeros_like(Et) if delay_only else doppler_difference(tv[:, None], ev[None, :], config) ** 2
        rows, cols = linear_sum_assignment(Et / T0 ** 2 + Ev / f0 ** 2)
        dt2[rows] = Et[rows, cols]
        dv2[rows] = np.nan if delay_only else Ev[rows, cols]
        if delay_only:
            dv2[:] = np.nan
    return TrialErrors(dt2, dv2, L - len(est))


def grid_floor(dicts) -> tuple[float, float]:
    """MSE ``(delay s^2, doppler Hz^2)`` of rounding a uniform parameter to the grid.

    A grid estimator cannot beat ``step^2 / 12`` once the noise error falls
    below one grid step, so this is the floor its MSE flattens onto at high SNR.
    """
    d_tau = dicts.delay_grid[1] - dicts.delay_grid[0] if dicts.n_delay > 1 else 0.0
    d_nu = dicts.doppler_grid[1] - dicts.doppler_grid[0] if dicts.n_doppler > 1 else dicts.config.subcarrier_spacing_hz
    return float(d_tau ** 2 / 12), float(d_nu ** 2 / 12)
