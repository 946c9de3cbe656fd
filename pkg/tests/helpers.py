"""Shared builders for planted on-grid test problems."""
import numpy as np

from tvsense.channel import Target, ici_window, signed_index
from tvsense.dictionary import SparseTensor, build_dictionaries


def small_dicts(cfg, P=8, Q=8):
    """Grid whose delay step is exactly ``T0`` (P=8 spans ``[0, 7 T0]``)."""
    return build_dictionaries(cfg, P, Q, (P - 1) * cfg.sample_period_s)


def on_grid_target(dicts, rng, n_range=(-3, 4)):
    cfg = dicts.config
    p = int(rng.integers(dicts.n_delay))
    q = int(rng.integers(dicts.n_doppler))
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    gain = complex(rng.standard_normal(), rng.standard_normal())
    return Target(gain, float(dicts.delay_grid[p]),
                  float(n * cfg.subcarrier_spacing_hz + dicts.doppler_grid[q])), (p, q, n)


def ideal_tensor(dicts, targets):
    """``values[p, q, n] = h g(n f0 - nu)`` for on-grid targets."""
    cfg = dicts.config
    N, f0 = cfg.n_subcarriers, cfg.subcarrier_spacing_hz
    vals = np.zeros((dicts.n_delay, dicts.n_doppler, N), dtype=complex)
    n_signed = signed_index(np.arange(N), N)
    for t in targets:
        p = int(np.argmin(np.abs(dicts.delay_grid - t.delay_s)))
        xi = t.fractional_doppler(cfg)
        q = int(np.argmin(np.abs(dicts.doppler_grid - xi)))
        vals[p, q, :] += t.gain * ici_window(n_signed * f0 - t.doppler_hz, cfg)
    return SparseTensor(vals, dicts)
