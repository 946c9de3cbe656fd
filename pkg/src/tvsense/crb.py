"""Fisher information and Cramer-Rao bounds for delay, Doppler and gain.

Parameters are ordered ``theta = (tau_1..tau_L, nu_1..nu_L, Re h_1..Re h_L,
Im h_1..Im h_L)``.  For complex Gaussian noise of variance ``sigma2`` on each
observed entry ``H_fd(k) s``,

    J = (2 / sigma2) sum_k Re(G_k^H G_k),   G_k[:, i] = dH_fd(k)/dtheta_i s(k).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import (SystemConfig, Target, _check_targets, _target_arrays, ici_window,
                      ici_window_prime, signed_index)

BLOCKS = ("delay", "doppler", "gain_re", "gain_im")


class CrbError(ValueError):
    """The Fisher information is singular or too ill-conditioned to invert."""


@dataclass
class FisherMatrix:
    J: np.ndarray
    sigma2: float
    n_targets: int


@dataclass
class CrbResult:
    """Diagonal of ``J^-1`` split by parameter block (s^2, Hz^2, gain^2)."""

    delay_s2: np.ndarray
    doppler_hz2: np.ndarray
    gain_re: np.ndarray
    gain_im: np.ndarray
    condition: float

    def normalized(self, config: SystemConfig):
        """Delay and Doppler bounds in ``T0^2`` and ``f0^2`` units."""
        return (self.delay_s2 / config.sample_period_s ** 2,
                self.doppler_hz2 / config.subcarrier_spacing_hz ** 2)


def channel_derivatives(config: SystemConfig, targets: Sequence[Target], k: int):
    """Partial derivatives of ``H_fd(k)`` for every target.

    Returns four arrays of shape ``(L, N, N)``: with respect to delay,
    Doppler, real gain and imaginary gain.
    """
    _check_targets(config, targets)
    N = config.n_subcarriers
    f0, T = config.subcarrier_spacing_hz, config.block_duration_s
    h, tau, nu = _target_arrays(targets)
    idx = np.arange(N)
    diff = signed_index(idx[:, None] - idx[None, :], N) * f0                # (n, m)
    arg = diff[None] - nu[:, None, None]                                    # (L, n, m)
    ramp = np.exp(-2j * np.pi * idx[None, None, :] * f0 * tau[:, None, None])
    blk = np.exp(2j * np.pi * nu * k * T)[:, None, None]
    win = ici_window(arg, config)
    R = blk * win * ramp                                                    # gain stripped
    term = h[:, None, None] * R
    dT = term * (-2j * np.pi * idx[None, None, :] * f0)
    dV = h[:, None, None] * ramp * blk * (2j * np.pi * k * T * win - ici_window_prime(arg, config))
    return dT, dV, R, 1j * R


def _perm(N: int, shift: int) -> np.ndarray:
    """Permutation matrix moving row ``i`` to row ``i - shift`` (circular)."""
    return np.roll(np.eye(N), -shift, axis=0)


def channel_derivatives_permuted(config: SystemConfig, targets: Sequence[Target], k: int):
    """Cross-check route: differentiate the Doppler-indexed form, then undo
    the re-alignment.

    In the re-aligned domain column ``m`` of block ``k`` is a slice-indexed
    vector ``x_m[n] = h w(n f0 - nu) e^{j 2 pi nu k T} e^{-j 2 pi m f0 tau}``
    whose Doppler derivative only touches ``w`` and the block phase.
    ``H_fd(k)[:, m] = P_m^T x_m`` with ``P_m`` the circular shift by ``m``.
    """
    _check_targets(config, targets)
    N = config.n_subcarriers
    f0, T = config.subcarrier_spacing_hz, config.block_duration_s
    h, tau, nu = _target_arrays(targets)
    L = len(targets)
    n = signed_index(np.arange(N), N) * f0
    out = [np.zeros((L, N, N), dtype=complex) for _ in range(4)]
    for l in range(L):
        w = ici_window(n - nu[l], config)
        wp = -ici_window_prime(n - nu[l], config)
        ph = np.exp(2j * np.pi * nu[l] * k * T)
        for m in range(N):
            steer = np.exp(-2j * np.pi * m * f0 * tau[l])
            base = ph * steer * w
            cols = (h[l] * base * (-2j * np.pi * m * f0),
                    h[l] * steer * ph * (2j * np.pi * k * T * w + wp),
                    base, 1j * base)
            Pm = _perm(N, m)
            for fam, x in zip(out, cols):
                fam[l][:, m] = Pm.T @ x
    return tuple(out)


def _pilot_matrix(pilots, config: SystemConfig, k: int) -> np.ndarray:
    N = config.n_subcarriers
    if pilots is None:
        return np.ones((N, 1), dtype=complex)
    if isinstance(pilots, str):
        if pilots == "identity":
            return np.eye(N, dtype=complex)
        raise ValueError(f"unknown pilot preset {pilots!r}")
    if isinstance(pilots, (list, tuple)) or np.ndim(pilots) == 3:
        if len(pilots) != config.n_blocks:
            raise ValueError(f"expected {config.n_blocks} per-block pilots, got {len(pilots)}")
        pilots = pilots[k]
    return np.asarray(pilots, dtype=complex).reshape(N, -1)


def fisher_matrix(config: SystemConfig, targets: Sequence[Target], pilots=None,
                  sigma2: float = 1.0) -> FisherMatrix:
    """Fisher information of ``theta`` from ``y(k) = H_fd(k) S(k) + noise``.

    ``pilots`` is ``None`` (all-ones, unit power per subcarrier), a length-``N``
    vector or ``N x P`` array shared by all blocks, a list of ``K`` such
    per-block pilots (or a ``(K, N, P)`` array), or ``"identity"``, which
    observes every entry of ``H_fd(k)`` as the re-aligned channel does.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    L = len(targets)
    J = np.zeros((4 * L, 4 * L))
    for k in range(config.n_blocks):
        S = _pilot_matrix(pilots, config, k)
        fams = channel_derivatives(config, targets, k)
        G = np.concatenate([(f @ S).reshape(L, -1) for f in fams], axis=0).T   # (obs, 4L)
        J += np.real(G.conj().T @ G)
    J *= 2.0 / sigma2
    return FisherMatrix(0.5 * (J + J.T), float(sigma2), L)


def crb_diagonal(fim: FisherMatrix, cond_max: float = 1e12) -> CrbResult:
    """Diagonal of ``J^-1``, after a Jacobi-scaled conditioning check."""
    J = fim.J
    L = fim.n_targets
    d = np.sqrt(np.diag(J))
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise CrbError("Fisher matrix has a zero-information parameter")
    Js = J / np.outer(d, d)
    w, V = np.linalg.eigh(Js)
    cond = float(w[-1] / w[0]) if w[0] > 0 else np.inf
    if not cond < cond_max:
        v = V[:, 0]
        i = int(np.argmax(np.abs(v)))
        raise CrbError(f"Fisher matrix ill-conditioned (cond {cond:.3g}); near-null direction "
                       f"dominated by {BLOCKS[i // L]} of target {i % L}")
    inv = np.linalg.inv(Js) / np.outer(d, d)
    diag = np.diag(inv).copy()
    return CrbResult(diag[:L], diag[L:2 * L], diag[2 * L:3 * L], diag[3 * L:], cond)


def crb(config: SystemConfig, targets: Sequence[Target], sigma2: float, pilots=None) -> CrbResult:
    """Bounds at noise variance ``sigma2``.

    The Fisher matrix is evaluated at unit noise and the bounds scaled by
    ``sigma2``; ``J`` is proportional to ``1 / sigma2``, so this is exact.
    """
    res = crb_diagonal(fisher_matrix(config, targets, pilots, 1.0))
    for name in ("delay_s2", "doppler_hz2", "gain_re", "gain_im"):
        setattr(res, name, getattr(res, name) * sigma2)
    return res
