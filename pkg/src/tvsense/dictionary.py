"""Delay/Doppler grids, steering dictionaries and sparse-support readout."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import SystemConfig, ici_window, signed_index, wrap_doppler


class EstimationError(RuntimeError):
    """An estimator cannot produce estimates for this input (e.g. a
    rank-deficient steering matrix).  Benchmarks count it as a failed trial."""


@dataclass(frozen=True)
class Dictionaries:
    """Delay and fractional-Doppler grids with their steering matrices.

    ``a_tau[m, p] = exp(-j 2 pi m f0 tau_p)`` (``N x P``) and
    ``a_nu[k, q] = exp(-j 2 pi xi_q k T)`` (``K x Q``).
    """

    config: SystemConfig
    delay_grid: np.ndarray
    doppler_grid: np.ndarray
    a_tau: np.ndarray = field(repr=False)
    a_nu: np.ndarray = field(repr=False)

    @property
    def n_delay(self) -> int:
        return self.delay_grid.size

    @property
    def n_doppler(self) -> int:
        return self.doppler_grid.size


@dataclass
class SparseTensor:
    """Estimated ``P x Q x N`` coefficient tensor.

    ``values[p, q, n]`` is the coefficient of delay ``p`` and fractional
    Doppler ``q`` in Doppler slice ``n``.  It holds the channel gain itself
    (the conjugate-transpose of the first-layer unknown, which stores ``h*``).
    """

    values: np.ndarray
    grid_meta: Dictionaries

    def __post_init__(self):
        d = self.grid_meta
        want = (d.n_delay, d.n_doppler, d.config.n_subcarriers)
        if self.values.shape != want:
            raise ValueError(f"tensor shape {self.values.shape} does not match grids {want}")


@dataclass(frozen=True)
class Estimate:
    """One estimated path.  ``doppler_hz`` is NaN for delay-only estimators."""

    delay_s: float
    doppler_hz: float
    gain: complex = 0j
    support: tuple = ()


def steering_delay(config: SystemConfig, delays) -> np.ndarray:
    m = np.arange(config.n_subcarriers)[:, None]
    return np.exp(-2j * np.pi * m * config.subcarrier_spacing_hz * np.atleast_1d(delays)[None, :])


def steering_doppler(config: SystemConfig, dopplers) -> np.ndarray:
    k = np.arange(config.n_blocks)[:, None]
    return np.exp(-2j * np.pi * np.atleast_1d(dopplers)[None, :] * k * config.block_duration_s)


def build_dictionaries(config: SystemConfig, n_delay: int, n_doppler: int, tau_range: float) -> Dictionaries:
    """Uniform grids: ``P`` delays on ``[0, tau_range]`` and ``Q`` fractional
    Dopplers on ``(-f0/2, f0/2]``."""
    if n_delay < 1 or n_doppler < 1:
        raise ValueError("grid sizes must be at least 1")
    if not 0 <= tau_range < config.max_delay_s:
        raise ValueError(f"tau_range {tau_range!r} must lie in [0, 1/f0) to avoid delay aliasing")
    f0 = config.subcarrier_spacing_hz
    delays = np.linspace(0.0, tau_range, n_delay) if n_delay > 1 else np.zeros(1)
    if n_delay > 1 and tau_range == 0:
        raise ValueError("tau_range must be positive when n_delay > 1")
    dopplers = -f0 / 2 + f0 * np.arange(1, n_doppler + 1) / n_doppler
    return Dictionaries(config, delays, dopplers,
                        steering_delay(config, delays), steering_doppler(config, dopplers))


def signed_slice_index(n: int, N: int) -> int:
    """Integer Doppler carried by slice ``n``: ``n`` if ``n <= N/2`` else ``n - N``."""
    return int(signed_index(n, N))


def refine_integer_doppler(profile: np.ndarray, peak_slice: int, xi: float,
                           config: SystemConfig, span: int = 1) -> float:
    """Pick the integer Doppler whose window profile best explains ``profile``.

    ``profile[n]`` is the complex amplitude of one support atom in slice ``n``.
    A path at Doppler ``nu`` scales slice ``n`` by ``g2(n f0 - nu)``, so the
    hypotheses ``(peak + j) f0 + xi`` for ``|j| <= span`` are scored by the
    energy of the least-squares fit of that profile.  This resolves the
    half-bin ambiguity near ``xi = +-f0/2``.  With a periodic window the
    result is wrapped into ``[-N f0/2, N f0/2)``.
    """
    N = config.n_subcarriers
    f0 = config.subcarrier_spacing_hz
    base = signed_slice_index(peak_slice, N)
    n = signed_index(np.arange(N), N)
    best, best_score = base * f0 + xi, -np.inf
    for j in sorted(range(-span, span + 1), key=abs):
        nu = (base + j) * f0 + xi
        w = ici_window(n * f0 - nu, config)
        energy = float(np.dot(w, w))
        if energy <= 0:
            continue
        score = abs(np.vdot(w, profile)) ** 2 / energy
        if score > best_score * (1 + 1e-12):
            best, best_score = nu, score
    return float(wrap_doppler(best, config)) if config.periodic_doppler else best


def _neighbourhood(idx: int, radius: int, size: int, circular: bool) -> np.ndarray:
    offs = np.arange(-radius, radius + 1) + idx
    if circular:
        return np.unique(offs % size)
    return offs[(offs >= 0) & (offs < size)]


def slice_profile(values: np.ndarray, p: int, q: int, n: int, radius: int = 1) -> np.ndarray:
    """Amplitude of the local ``(p, q)`` pattern of slice ``n`` in every slice.

    ``values`` is a ``P x Q x N`` array; the pattern is taken over the
    ``radius`` neighbourhood (circular in ``q``) and projected across slices,
    which tolerates off-grid energy split between adjacent grid points.
    """
    P, Q, _ = values.shape
    ps = _neighbourhood(p, radius, P, circular=False)
    qs = _neighbourhood(q, radius, Q, circular=True)
    block = values[np.ix_(ps, qs)]                      # (|ps|, |qs|, N)
    ref = block[..., n]
    norm = np.linalg.norm(ref)
    if norm == 0:
        return values[p, q, :].copy()
    return np.einsum("ij,ijn->n", ref.conj(), block) / norm


def exclusion_radius(dicts: Dictionaries) -> tuple[int, int]:
    """One resolution cell in grid steps, at least one step.

    Delay resolution is ``T0`` and fractional-Doppler resolution ``f0 / K``,
    the half-width of the steering-vector main lobes.  On fine grids a
    not-yet-sparse estimate spreads one path over its whole main lobe.
    """
    cfg = dicts.config
    r = []
    for grid, res in ((dicts.delay_grid, cfg.sample_period_s),
                      (dicts.doppler_grid, cfg.subcarrier_spacing_hz / cfg.n_blocks)):
        step = grid[1] - grid[0] if grid.size > 1 else res
        r.append(max(1, int(round(res / step))))
    return r[0], r[1]


def matched_profile(channel, dicts: Dictionaries, delay_s: float, frac_doppler_hz: float) -> np.ndarray:
    """Per-slice matched-filter output ``a_tau(tau)^H H(n) a_nu(xi)`` of the channel."""
    at = steering_delay(dicts.config, delay_s)[:, 0]
    an = steering_doppler(dicts.config, frac_doppler_hz)[:, 0]
    return np.einsum("m,nmk,k->n", at.conj(), channel.slices, an)


def _doppler_gap(a: float, b: float, config: SystemConfig) -> float:
    return float(wrap_doppler(a - b, config)) if config.periodic_doppler else a - b


def extract_estimates(tensor: SparseTensor, n_paths: int, radius=None,
                      slice_radius: Optional[int] = None, rel_floor: float = 1e-9,
                      refine: bool = True, leak_factor: float = 2.0,
                      channel=None, sidelobes: bool = True,
                      sidelobe_factor: float = 1.0) -> tuple[list[Estimate], bool]:
    """Greedy top-``L`` peak readout of a sparse tensor.

    Peaks are taken in decreasing modulus.  After each pick, the ``(p, q)``
    box of half-width ``radius`` (``q`` wraps around) is excluded in the
    picked slice.  A path also leaks into other slices with weight
    ``g2(n f0 - nu)``; within ``slice_radius`` slices (all when ``None``) the
    box is excluded as well unless its largest entry exceeds ``leak_factor``
    times the leakage predicted from the refined Doppler, in which case it is
    treated as a separate path.  A pick whose refined Doppler lies within
    ``f0 / K`` of an earlier estimate less than ``radius`` delay steps away
    is the same path seen in another slice and is skipped.  With ``sidelobes`` a similar test is applied
    outside the box to the dictionary sidelobes of the pick: a cell no larger
    than ``sidelobe_factor`` times the picked amplitude scaled by the delay
    and Doppler steering-vector correlations is excluded.

    ``radius`` is an int, a ``(delay, doppler)`` pair, or ``None`` for
    :func:`exclusion_radius`.  When the observed ``channel`` is given, the
    integer Doppler is refined on its matched-filter slice profile rather
    than on the (shrunk, sparse) tensor entries.

    Returns
    -------
    estimates : list of Estimate
    underflow : bool
        True when fewer than ``n_paths`` non-negligible peaks were available.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    vals = np.asarray(tensor.values)
    if vals.size == 0:
        raise ValueError("empty tensor")
    d = tensor.grid_meta
    cfg = d.config
    P, Q, N = vals.shape
    f0 = cfg.subcarrier_spacing_hz
    if radius is None:
        rp, rq = exclusion_radius(d)
    elif np.ndim(radius) == 0:
        rp = rq = int(radius)
    else:
        rp, rq = (int(r) for r in radius)
    mag = np.abs(vals)
    peak = mag.max()
    if peak == 0:
        return [], True
    avail = mag > rel_floor * peak
    n_signed = signed_index(np.arange(N), N)
    nu_res = f0 / cfg.n_blocks
    if sidelobes:
        kp_all = np.abs(d.a_tau.conj().T @ d.a_tau) / cfg.n_subcarriers     # (P, P)
        kq_all = np.abs(d.a_nu.conj().T @ d.a_nu) / cfg.n_blocks            # (Q, Q)
    out: list[Estimate] = []
    while len(out) < n_paths and avail.any():
        flat = np.argmax(np.where(avail, mag, -1.0))
        p, q, n = np.unravel_index(flat, mag.shape)
        xi = d.doppler_grid[q]
        if refine:
            if channel is not None:
                profile = matched_profile(channel, d, d.delay_grid[p], xi)
            else:
                profile = slice_profile(vals, p, q, n, max(rp, rq))
            nu = refine_integer_doppler(profile, n, xi, cfg)
        else:
            nu = signed_slice_index(n, N) * f0 + xi
        ps = _neighbourhood(p, rp, P, circular=False)
        qs = _neighbourhood(q, rq, Q, circular=True)
        box = np.ix_(ps, qs)
        if any(abs(p - e.support[0]) <= rp and abs(_doppler_gap(nu, e.doppler_hz, cfg)) < nu_res for e in out):
            # the same path seen again in another slice
            avail[box + (n,)] = False
            continue
        w = float(ici_window(signed_slice_index(n, N) * f0 - nu, cfg))
        gain = vals[p, q, n] / w if abs(w) > 0.1 else vals[p, q, n]
        out.append(Estimate(float(d.delay_grid[p]), float(nu), complex(gain),
                            (int(p), int(q), signed_slice_index(n, N))))
        leak = np.abs(ici_window(n_signed * f0 - nu, cfg)) * mag[p, q, n] / max(abs(w), 1e-12)
        ns = np.arange(N) if slice_radius is None else _neighbourhood(n, slice_radius, N, circular=True)
        for s in ns:
            if s == n or mag[box + (s,)].max() <= leak_factor * leak[s]:
                avail[box + (s,)] = False
        if sidelobes:
            pattern = np.outer(kp_all[:, p], kq_all[:, q])                   # (P, Q)
            avail &= ~(mag <= sidelobe_factor * pattern[:, :, None] * leak[None, None, :])
    return out, len(out) < n_paths
