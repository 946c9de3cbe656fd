"""Reference estimators compared against the two proposed methods."""
from __future__ import annotations

import numpy as np

from ..channel import RealignedChannel, Target, ici_window, signed_index
from ..dictionary import (Dictionaries, Estimate, EstimationError, SparseTensor, exclusion_radius,
                          extract_estimates, steering_delay,
                          refine_integer_doppler, signed_slice_index, steering_doppler)
from ..music import (correlation, fill_delays, music_delays, right_pseudo_inverse,
                     slice_sum_correlation, stack_h1, summed_correlation)
from ..sbl import VbiOptions, vbi_solve


def fft_coarse_estimate(channel: RealignedChannel, config, n_paths: int) -> list[Estimate]:
    """Integer-bin delay/Doppler peaks of the per-slice delay profiles.

    Each slice is transformed to the delay domain by an inverse DFT across
    subcarriers and its power is averaged over blocks (a coherent block
    average would cancel paths with a fractional Doppler).  The ``L``
    strongest ``(delay bin, slice)`` cells are picked greedily, excluding
    the 1-neighbourhood of each pick.  Estimates are ``m T0`` and
    ``n f0``; fractional parts are not resolved.
    """
    s = np.asarray(channel.slices)
    N = s.shape[0]
    prof = np.mean(np.abs(np.fft.ifft(s, axis=1)) ** 2, axis=2)      # (n, delay bin)
    T0, f0 = config.sample_period_s, config.subcarrier_spacing_hz
    avail = prof > 0
    out = []
    while len(out) < n_paths and avail.any():
        n, m = np.unravel_index(np.argmax(np.where(avail, prof, -1.0)), prof.shape)
        out.append(Estimate(float(m * T0), float(signed_slice_index(n, N) * f0), 0j,
                            (int(m), 0, signed_slice_index(n, N))))
        ns = (n + np.arange(-1, 2)) % N
        ms = (m + np.arange(-1, 2)) % N
        avail[np.ix_(ns, ms)] = False
    return out


def summation_music_delays(channel: RealignedChannel, dicts: Dictionaries, config, n_paths: int,
                           variant: str = "slice_sum"):
    """MUSIC delays from a summed rather than stacked correlation.

    ``variant="correlation_sum"`` adds the per-slice correlations, which is
    algebraically the stacked correlation; ``"slice_sum"`` sums the slices
    first and then correlates.
    """
    if variant == "correlation_sum":
        R = summed_correlation(channel)
    elif variant == "slice_sum":
        R = slice_sum_correlation(channel)
    else:
        raise ValueError(f"unknown summation variant {variant!r}")
    return _filled(music_delays(R, dicts.delay_grid, config, n_paths), dicts, n_paths)


def stacking_music_delays(channel: RealignedChannel, dicts: Dictionaries, config, n_paths: int):
    return _filled(music_delays(correlation(stack_h1(channel)), dicts.delay_grid, config, n_paths),
                   dicts, n_paths)


def _filled(result, dicts: Dictionaries, n_paths: int):
    # same padding as the two-stage estimator, so both variants are scored alike
    if result.peak_indices.size < n_paths:
        result.peak_indices = fill_delays(result, dicts.delay_grid, n_paths,
                                          max(1, exclusion_radius(dicts)[0] // 2))
        result.delays_s = np.asarray(dicts.delay_grid)[result.peak_indices]
    return result


def _delay_only(result) -> list[Estimate]:
    return [Estimate(float(t), float("nan"), 0j, (int(p),))
            for t, p in zip(result.delays_s, result.peak_indices)]


def perfect_vbi_delay(channel: RealignedChannel, dicts: Dictionaries, truth: list[Target],
                      opts: VbiOptions = VbiOptions(), max_iter=None):
    """Doppler by VBI with the true delays supplied (genie delay)."""
    cfg = dicts.config
    s = np.asarray(channel.slices)
    N, _, K = s.shape
    delays = np.array([t.delay_s for t in truth])
    pinv = right_pseudo_inverse(steering_delay(cfg, delays))
    L = delays.size
    Yp = np.einsum("nmk,ml->knl", s.conj(), pinv).reshape(K, N * L)
    X, st = vbi_solve(Yp, dicts.a_nu, opts, groups=N, max_iter=max_iter)
    X, Yp = X.reshape(-1, N, L), Yp.reshape(K, N, L)
    out = []
    for l in range(L):
        q = int(np.argmax(np.sum(np.abs(X[:, :, l]) ** 2, axis=1)))
        profile = dicts.a_nu[:, q].conj() @ Yp[:, :, l] / K
        n = int(np.argmax(np.abs(profile)))
        nu = refine_integer_doppler(profile, n, float(dicts.doppler_grid[q]), cfg)
        out.append(Estimate(float(delays[l]), float(nu), 0j, (None, q, signed_slice_index(n, N))))
    return out, st


def perfect_vbi_doppler(channel: RealignedChannel, dicts: Dictionaries, truth: list[Target],
                        opts: VbiOptions = VbiOptions(), max_iter=None):
    """Delay by VBI with the true Dopplers supplied (genie Doppler).

    ``H(n) = A_tau diag(h w_n) B^T`` with ``B[k, l] = exp(j 2 pi nu_l k T)``;
    right-multiplying by the pseudo-inverse of ``B^T`` leaves one delay
    problem per path.
    """
    cfg = dicts.config
    s = np.asarray(channel.slices)
    N, _, K = s.shape
    nus = np.array([t.doppler_hz for t in truth])
    L = nus.size
    Bt = steering_doppler(cfg, nus).conj().T                       # (L, K)
    G = Bt @ Bt.conj().T
    if np.linalg.cond(G) > 1e12:
        raise EstimationError("true Dopplers are not separable over the block axis")
    right = Bt.conj().T @ np.linalg.inv(G)                         # (K, L)
    Z = np.einsum("nmk,kl->mnl", s, right).reshape(N, N * L)
    X, st = vbi_solve(Z, dicts.a_tau, opts, groups=N, max_iter=max_iter)
    X = X.reshape(-1, N, L)
    out = []
    for l in range(L):
        e = np.sum(np.abs(X[:, :, l]) ** 2, axis=1)
        if not np.any(e):
            e = np.sum(np.abs(dicts.a_tau.conj().T @ Z.reshape(N, N, L)[:, :, l]) ** 2, axis=1)
        p = int(np.argmax(e))
        out.append(Estimate(float(dicts.delay_grid[p]), float(nus[l]), 0j, (p, None, None)))
    return out, st


def classical_dictionary(dicts: Dictionaries) -> np.ndarray:
    """``kron(conj(A_nu), A_tau)``: column ``p + P q`` maps ``D(n)[p, q]`` to
    the column-major ``vec`` of slice ``n``."""
    return np.kron(dicts.a_nu.conj(), dicts.a_tau)


def classical_vbi(channel: RealignedChannel, dicts: Dictionaries, n_paths: int,
                  opts: VbiOptions = VbiOptions(), max_iter=None):
    """Single-layer VBI on the vectorized slices with the Kronecker dictionary."""
    s = np.asarray(channel.slices)
    N, _, K = s.shape
    P, Q = dicts.n_delay, dicts.n_doppler
    Y = s.transpose(2, 1, 0).reshape(K * N, N)                     # vec(H(n)) column-major
    X, st = vbi_solve(Y, classical_dictionary(dicts), opts, max_iter=max_iter)
    tensor = SparseTensor(X.reshape(Q, P, N).transpose(1, 0, 2), dicts)
    est, _ = extract_estimates(tensor, n_paths, channel=channel)
    return est, st
