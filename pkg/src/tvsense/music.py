"""MUSIC delay estimation and the two-stage MUSIC + VBI Doppler estimator.

Stacking ``Y(n) = H(n)^H`` over all slices gives a ``KN x N`` matrix whose
row space is spanned by the delay steering vectors of the ``L`` paths, so
its ``N x N`` correlation separates a signal and a noise subspace.  Once the
delays are known, right-multiplying each ``Y(n)`` by the pseudo-inverse of
the delay steering matrix decouples the paths into ``L`` single-atom Doppler
problems on the fractional-Doppler dictionary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import RealignedChannel, SystemConfig, ici_window, signed_index
from .dictionary import (Dictionaries, Estimate, EstimationError, SparseTensor, exclusion_radius,
                         extract_estimates, refine_integer_doppler, signed_slice_index, steering_delay)
from .sbl import VbiOptions, vbi_solve


@dataclass
class MusicResult:
    """Delays at the ``L`` largest spectrum peaks.

    ``degenerate`` is set when the spectrum is flat or has fewer than ``L``
    local maxima; ``delays_s`` then holds whatever peaks were found.
    """

    delays_s: np.ndarray
    spectrum: np.ndarray
    eigvals: np.ndarray
    noise_subspace_dim: int
    peak_indices: np.ndarray
    degenerate: bool = False


@dataclass
class TwoStageInfo:
    music: MusicResult
    vbi_iters: int = 0
    converged: bool = True


def stack_h1(channel: RealignedChannel) -> np.ndarray:
    """``(K N, N)`` matrix with block row ``n`` equal to ``H(n)^H``."""
    s = np.asarray(channel.slices)
    N, _, K = s.shape
    return np.conj(s).transpose(0, 2, 1).reshape(N * K, N)


def correlation(H1: np.ndarray) -> np.ndarray:
    """Sample correlation ``H1^H H1 / rows``, symmetrized."""
    H1 = np.asarray(H1)
    R = H1.conj().T @ H1 / H1.shape[0]
    return 0.5 * (R + R.conj().T)


def summed_correlation(channel: RealignedChannel) -> np.ndarray:
    """``sum_n H(n) H(n)^H / (K N)``: per-slice correlations added up.

    Algebraically the same matrix as ``correlation(stack_h1(channel))``.
    """
    s = np.asarray(channel.slices)
    N, _, K = s.shape
    R = np.einsum("nik,njk->ij", s, s.conj()) / (K * N)
    return 0.5 * (R + R.conj().T)


def slice_sum_correlation(channel: RealignedChannel) -> np.ndarray:
    """Correlation of the slice sum ``H_sum = sum_n H(n)``, i.e. ``H_sum H_sum^H / K``.

    Summing the slices before correlating lets paths in different slices
    interfere, unlike the stacked form.
    """
    s = np.asarray(channel.slices)
    Hs = s.sum(axis=0)
    R = Hs @ Hs.conj().T / s.shape[2]
    return 0.5 * (R + R.conj().T)


def _local_maxima(spec: np.ndarray, edges: bool = False) -> np.ndarray:
    # rising edge strictly, falling edge weakly: a plateau reports its first point.
    # Grid end points only count with edges=True: the spectrum beyond them is unseen.
    left = np.r_[edges, spec[1:] > spec[:-1]]
    right = np.r_[spec[:-1] >= spec[1:], edges]
    return np.flatnonzero(left & right)


def music_spectrum(R: np.ndarray, delay_grid, config: SystemConfig, n_paths: int):
    """Eigen-decomposition and MUSIC pseudo-spectrum over ``delay_grid``.

    Returns ``(spectrum, eigvals_desc, noise_basis)``.
    """
    w, U = np.linalg.eigh(R)
    order = np.argsort(w)[::-1]
    w, U = w[order], U[:, order]
    Un = U[:, n_paths:]
    A = steering_delay(config, delay_grid)
    proj = np.sum(np.abs(Un.conj().T @ A) ** 2, axis=0)
    spec = 1.0 / np.maximum(proj, np.finfo(float).tiny)
    return spec, w, Un


def music_delays(R1: np.ndarray, delay_grid, config: SystemConfig, n_paths: int,
                 flat_tol: float = 1e-9, edges: bool | None = None) -> MusicResult:
    """Delays at the ``n_paths`` largest local maxima of the MUSIC spectrum.

    Ties between equal peaks go to the smaller delay.  A grid end point whose
    neighbour is lower is a candidate when ``edges=True``, never when
    ``edges=False``, and by default only when it would rank among the
    ``n_paths`` largest interior peaks: a spectrum that merely keeps rising
    past the grid should not displace a genuine interior peak, nor pad a
    short peak list (:func:`fill_delays` does that).
    """
    N = np.asarray(R1).shape[0]
    if not 1 <= n_paths < N:
        raise ValueError(f"need 1 <= L < N, got L={n_paths}, N={N}")
    grid = np.asarray(delay_grid, dtype=float)
    spec, w, _ = music_spectrum(R1, grid, config, n_paths)
    flat = not np.any(R1) or (spec.max() - spec.min()) <= flat_tol * spec.max()
    peaks = _local_maxima(spec, edges=bool(edges))
    if edges is None and spec.size > 1:
        ends = np.setdiff1d(_local_maxima(spec, edges=True), peaks)
        inner = np.sort(spec[peaks])[::-1]
        bar = inner[n_paths - 1] if inner.size >= n_paths else -np.inf
        peaks = np.union1d(peaks, ends[spec[ends] >= bar])
    # stable sort keeps ascending delay order among equal values
    peaks = peaks[np.argsort(-spec[peaks], kind="stable")][:n_paths]
    if flat:
        peaks = peaks[:0]
    degenerate = flat or peaks.size < n_paths
    return MusicResult(grid[peaks], spec, w, N - n_paths, peaks, degenerate)


def estimate_model_order(eigvals, max_order: int | None = None) -> int:
    """Number of paths from the largest gap of the log eigenvalue profile."""
    w = np.sort(np.asarray(eigvals, dtype=float))[::-1]
    w = np.maximum(w, w[0] * 1e-15 if w[0] > 0 else np.finfo(float).tiny)
    top = len(w) - 1 if max_order is None else min(max_order, len(w) - 1)
    if top < 1:
        return 0
    gaps = np.log(w[:top]) - np.log(w[1:top + 1])
    return int(np.argmax(gaps)) + 1


def fill_delays(result: MusicResult, delay_grid, n_paths: int, radius: int) -> np.ndarray:
    """Peak indices padded to ``n_paths`` from the remaining spectrum.

    Paths closer than the delay resolution merge into one MUSIC peak; the
    padding takes the largest spectrum values at least ``radius`` grid steps
    away from every index already chosen.
    """
    picks = list(result.peak_indices)
    spec = result.spectrum
    if not picks and (spec.max() - spec.min()) <= 1e-9 * spec.max():
        return np.asarray(picks, dtype=int)
    idx = np.arange(spec.size)
    while len(picks) < n_paths:
        ok = np.all(np.abs(idx[:, None] - np.asarray(picks)[None, :]) >= radius, axis=1) if picks \
            else np.ones(spec.size, bool)
        if not ok.any():
            break
        picks.append(int(np.argmax(np.where(ok, spec, -np.inf))))
    return np.asarray(picks, dtype=int)


def right_pseudo_inverse(a_hat: np.ndarray, cond_max: float = 1e12) -> np.ndarray:
    """``A (A^H A)^-1`` so that ``A^H`` times it is the identity."""
    G = a_hat.conj().T @ a_hat
    c = np.linalg.cond(G)
    if not np.isfinite(c) or c > cond_max:
        raise EstimationError(f"delay steering matrix is rank deficient (cond {c:.3g})")
    return a_hat @ np.linalg.inv(G)


def two_stage_solve(channel: RealignedChannel, dicts: Dictionaries, n_paths: int,
                    opts: VbiOptions = VbiOptions(), *, correlation_fn=None,
                    max_iter: int | None = None, fill: bool = True, fill_radius: int | None = None,
                    pairing: str = "joint"):
    """MUSIC delays followed by a reduced VBI Doppler solve.

    Parameters
    ----------
    correlation_fn : callable, optional
        Maps the channel to the ``N x N`` correlation used by MUSIC; defaults
        to the stacked form.
    fill : bool
        Pad the MUSIC delays to ``n_paths`` with :func:`fill_delays` when the
        spectrum has fewer peaks than paths.  ``fill_radius`` defaults to half
        the delay resolution in grid steps.

    Returns
    -------
    estimates : list of Estimate
        One per MUSIC delay; column ``l`` of the reduced problem carries the
        Doppler of delay ``l``, so the pairs need no association step.
    info : TwoStageInfo
    """
    if pairing not in ("joint", "column"):
        raise ValueError(f"unknown pairing {pairing!r}")
    cfg = dicts.config
    N, K = channel.n_subcarriers, channel.n_blocks
    R = correlation(stack_h1(channel)) if correlation_fn is None else correlation_fn(channel)
    mus = music_delays(R, dicts.delay_grid, cfg, n_paths)
    info = TwoStageInfo(mus)
    if fill and mus.peak_indices.size < n_paths:
        if fill_radius is None:
            fill_radius = max(1, exclusion_radius(dicts)[0] // 2)
        mus.peak_indices = fill_delays(mus, dicts.delay_grid, n_paths, fill_radius)
        mus.delays_s = np.asarray(dicts.delay_grid)[mus.peak_indices]
    L = mus.delays_s.size
    if L == 0:
        return [], info
    if len(set(mus.peak_indices.tolist())) < L:
        raise EstimationError(f"MUSIC returned duplicate delays {mus.delays_s}")
    a_hat = steering_delay(cfg, mus.delays_s)                     # (N, L)
    pinv = right_pseudo_inverse(a_hat)
    s = np.asarray(channel.slices)
    # Y'(n) = H(n)^H pinv, stacked as columns (n, l)
    Yp = np.einsum("nmk,ml->knl", s.conj(), pinv).reshape(K, N * L)
    X, st = vbi_solve(Yp, dicts.a_nu, opts, groups=N, max_iter=max_iter)
    info.vbi_iters, info.converged = st.iter_count, st.converged
    X = X.reshape(-1, N, L)                                       # [q, n, l]
    if pairing == "joint":
        return _joint_pairs(X, channel, dicts, mus, n_paths), info
    Yp = Yp.reshape(K, N, L)
    f0 = cfg.subcarrier_spacing_hz
    n_signed = signed_index(np.arange(N), N)
    out = []
    for l in range(L):
        energy = np.sum(np.abs(X[:, :, l]) ** 2, axis=1)
        if not np.any(energy):
            energy = np.sum(np.abs(dicts.a_nu.conj().T @ Yp[:, :, l]) ** 2, axis=1)
        q = int(np.argmax(energy))
        n = int(np.argmax(np.abs(X[q, :, l]))) if np.any(X[q, :, l]) else 0
        xi = float(dicts.doppler_grid[q])
        profile = np.conj(dicts.a_nu[:, q] @ Yp[:, :, l].conj()) / K   # a_nu(xi)^H y'_l(n)
        if not np.any(X[q, :, l]):
            n = int(np.argmax(np.abs(profile)))
        nu = refine_integer_doppler(profile, n, xi, cfg)
        w = ici_window(n_signed * f0 - nu, cfg)
        gain = np.vdot(w, np.conj(profile)) / max(float(np.dot(w, w)), 1e-12)
        out.append(Estimate(float(mus.delays_s[l]), float(nu), complex(gain),
                            (int(mus.peak_indices[l]), q, signed_slice_index(n, N))))
    return out, info


def _joint_pairs(X: np.ndarray, channel: RealignedChannel, dicts: Dictionaries, mus: MusicResult,
                 n_paths: int) -> list[Estimate]:
    """Top-``n_paths`` Doppler atoms over all delay columns together.

    Paths closer than the delay resolution share one MUSIC peak; their
    Dopplers then appear as separate atoms of a single column, while the
    column of a padded delay stays nearly empty.  The pseudo-inverse has
    already decoupled the delay columns, so no delay sidelobe exclusion is
    applied: two paths sharing a Doppler may land in adjacent columns.
    """
    cfg = dicts.config
    sub = Dictionaries(cfg, np.asarray(mus.delays_s, dtype=float), dicts.doppler_grid,
                       steering_delay(cfg, mus.delays_s), dicts.a_nu)
    tensor = SparseTensor(np.conj(X).transpose(2, 0, 1), sub)     # [l, q, n], gains h
    est, _ = extract_estimates(tensor, n_paths, radius=(0, exclusion_radius(dicts)[1]), channel=channel,
                              sidelobes=False)
    return [Estimate(e.delay_s, e.doppler_hz, e.gain, (int(mus.peak_indices[e.support[0]]),) + e.support[1:])
            for e in est]
