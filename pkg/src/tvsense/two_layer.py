"""Two-layer variational Bayesian estimator of the delay-Doppler sparse tensor.

Slice ``n`` of the re-aligned channel is observed as

    Y(n) = H(n)^H = A_nu C(n) + W(n),      C(n)^H = A_tau D(n) + E(n),

where ``D(n)`` (``P x Q``) is sparse.  The first layer infers ``C(n)`` column
by column against the Doppler dictionary; the second layer runs a classical
VBI solve for ``D(n)`` against the delay dictionary.  The layers are coupled
only through the precisions: the prior precision of each ``C(n)`` entry is the
harmonic combination of the ``D(n)`` precisions feeding it
(:func:`propagate_precision`), never a free hyperparameter.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import RealignedChannel
from .dictionary import Dictionaries, SparseTensor
from .sbl import (PosteriorMoments, VbiOptions, noise_precision_cap, posterior_moments,
                  relative_change, update_noise_precision, vbi_solve)


@dataclass(frozen=True)
class TwoLayerOptions:
    """Budgets for the outer (first-layer) and inner (second-layer) loops.

    ``inner`` carries the hyperprior shared by both layers.  ``outer_tol`` and
    ``outer_max_iter`` control the outer loop; ``inner.tol`` and
    ``inner.max_iter`` control each second-layer solve.
    """

    inner: VbiOptions = VbiOptions()
    outer_tol: float = 1e-5
    outer_max_iter: int = 167
    warm_start: bool = True
    per_slice_beta: bool = False
    beta_mode: str = "variance"
    include_noise_in_criterion: bool = True

    def __post_init__(self):
        if not self.outer_tol > 0:
            raise ValueError("outer_tol must be positive")
        if self.beta_mode not in ("point", "variance", "tied"):
            raise ValueError(f"unknown beta_mode {self.beta_mode!r}")
        if self.outer_max_iter < 1:
            raise ValueError("outer_max_iter must be at least 1")


@dataclass
class TwoLayerState:
    """Estimator state.  Column ``n*N + m`` of the first-layer arrays is
    subcarrier ``m`` of slice ``n``; column ``n*Q + q`` of the second-layer
    arrays is fractional-Doppler atom ``q`` of slice ``n``."""

    alpha_hat: float
    beta_hat: float
    c_post: PosteriorMoments          # (Q, N*N) means/variances, (N*N,) traces
    gamma_c: np.ndarray               # (Q, N*N)
    d_hat: np.ndarray                 # (P, N*Q)
    gamma_d: np.ndarray               # (P, N*Q)
    outer_iter: int = 0
    inner_iters: list = field(default_factory=list)


@dataclass
class TwoLayerDiagnostics:
    converged: bool
    outer_iter: int
    inner_iters: list
    inner_converged: list
    history: list
    alpha_hat: float
    beta_hat: float
    oscillating: bool

    @property
    def hit_cap(self) -> bool:
        return not self.converged


def propagate_precision(gamma_d_n: np.ndarray, a_tau: np.ndarray) -> np.ndarray:
    """Precisions of ``C(n)`` implied by the precisions of ``D(n)``.

    ``gamma_c[q, m] = 1 / sum_p |a_tau[m, p]|^2 / gamma_d[p, q]``.

    ``gamma_d_n`` may carry extra trailing column blocks: any ``(P, Q*B)``
    array is mapped to ``(Q*B, N)``.
    """
    gamma_d_n = np.asarray(gamma_d_n, dtype=float)
    if np.any(gamma_d_n <= 0):
        raise ValueError("precisions must be strictly positive")
    var = 1.0 / gamma_d_n                                  # (P, Q)
    w = np.abs(np.asarray(a_tau)) ** 2                     # (N, P)
    return 1.0 / (w @ var).T                               # (Q, N)


def stack_measurements(channel: RealignedChannel) -> np.ndarray:
    """``(K, N*N)`` matrix whose column ``n*N + m`` is column ``m`` of ``Y(n)``."""
    s = channel.slices                                     # (N, N, K) [n, m, k]
    N, _, K = s.shape
    return np.conj(s).transpose(2, 0, 1).reshape(K, N * N)


def first_layer_sweep(Y_all: np.ndarray, a_nu: np.ndarray, state: TwoLayerState,
                      opts: VbiOptions) -> TwoLayerState:
    """Noise precision, then the Gaussian posterior of every ``C(n)`` column."""
    alpha = min(update_noise_precision(Y_all, a_nu, state.c_post.mean, state.c_post.trace, opts),
                noise_precision_cap(Y_all, opts))
    state.alpha_hat = alpha
    state.c_post = posterior_moments(Y_all, a_nu, alpha, state.gamma_c)
    return state


def _second_layer_input(c_mean: np.ndarray, n_slices: int) -> np.ndarray:
    """Stack ``C(n)^H`` (``N x Q``) side by side into ``(N, N*Q)``."""
    Q = c_mean.shape[0]
    N = n_slices
    C = c_mean.reshape(Q, N, N)                             # [q, n, m]
    return np.conj(C).transpose(2, 1, 0).reshape(N, N * Q)  # [m, (n, q)]


def second_layer_solve(c_mean: np.ndarray, a_tau: np.ndarray, opts: VbiOptions, *,
                       n_slices: int, gamma_init=None, beta_init: Optional[float] = None,
                       per_slice_beta: bool = False, max_iter: Optional[int] = None,
                       c_var: Optional[np.ndarray] = None, learn_beta: bool = True):
    """Classical VBI for ``C(n)^H = A_tau D(n) + E(n)`` over all slices.

    Returns ``(d_hat, gamma_d, beta, iters, converged)`` with ``d_hat`` and
    ``gamma_d`` of shape ``(P, N*Q)``.
    """
    Z = _second_layer_input(c_mean, n_slices)
    extra = 0.0 if c_var is None else float(np.sum(c_var))
    if not per_slice_beta:
        X, st = vbi_solve(Z, a_tau, opts, gamma_init=gamma_init, noise_precision_init=beta_init,
                          groups=n_slices, max_iter=max_iter, extra_rate=extra,
                          learn_noise=learn_beta)
        return X, st.precision_means, st.noise_precision_mean, st.iter_count, st.converged
    P = a_tau.shape[1]
    Q = Z.shape[1] // n_slices
    X = np.zeros((P, Z.shape[1]), dtype=complex)
    G = np.empty((P, Z.shape[1]))
    betas, iters, conv = [], 0, True
    for n in range(n_slices):
        cols = slice(n * Q, (n + 1) * Q)
        g0 = None if gamma_init is None else np.asarray(gamma_init)[:, cols]
        extra_n = 0.0 if c_var is None else float(np.sum(c_var[:, n * n_slices:(n + 1) * n_slices]))
        Xn, st = vbi_solve(Z[:, cols], a_tau, opts, gamma_init=g0,
                           noise_precision_init=beta_init, max_iter=max_iter, extra_rate=extra_n,
                           learn_noise=learn_beta)
        X[:, cols], G[:, cols] = Xn, st.precision_means
        betas.append(st.noise_precision_mean)
        iters = max(iters, st.iter_count)
        conv &= st.converged
    return X, G, float(np.mean(betas)), iters, conv


def _tensor_from_columns(d_hat: np.ndarray, n_slices: int) -> np.ndarray:
    P, NQ = d_hat.shape
    Q = NQ // n_slices
    return d_hat.reshape(P, n_slices, Q).transpose(0, 2, 1)


def run_two_layer(channel: RealignedChannel, dicts: Dictionaries,
                  opts: TwoLayerOptions = TwoLayerOptions()):
    """Estimate the sparse tensor of a re-aligned channel.

    Returns
    -------
    tensor : SparseTensor
        ``values[p, q, n]`` carries ``h g2(n f0 - nu)`` at the support.
    diagnostics : TwoLayerDiagnostics
    """
    N = channel.n_subcarriers
    if N != dicts.config.n_subcarriers or channel.n_blocks != dicts.config.n_blocks:
        raise ValueError("channel and dictionary dimensions disagree")
    P, Q = dicts.n_delay, dicts.n_doppler
    vb = opts.inner
    Y_all = stack_measurements(channel)

    if not np.any(Y_all):
        tensor = SparseTensor(np.zeros((P, Q, N), dtype=complex), dicts)
        return tensor, TwoLayerDiagnostics(True, 1, [0], [True], [0.0],
                                           vb.noise_precision0, vb.noise_precision0, False)

    # initial precisions are relative to the measurement power, so the
    # iteration does not depend on the overall channel scale
    power = float(np.mean(np.abs(Y_all) ** 2))
    gamma_c = np.full((Q, N * N), vb.precision0 / power)
    alpha = vb.noise_precision0 / power
    state = TwoLayerState(alpha, alpha, posterior_moments(Y_all, dicts.a_nu, alpha, gamma_c),
                          gamma_c, np.zeros((P, N * Q), dtype=complex), np.full((P, N * Q), vb.precision0 / power))
    history, inner_conv = [], []
    converged = False
    for it in range(1, opts.outer_max_iter + 1):
        alpha_old = state.alpha_hat
        state = first_layer_sweep(Y_all, dicts.a_nu, state, vb)
        warm = opts.warm_start and it > 1
        tied = opts.beta_mode == "tied"
        if tied:
            beta0 = state.alpha_hat * float(np.mean(np.sum(np.abs(dicts.a_nu) ** 2, axis=0)))
        else:
            beta0 = state.beta_hat if warm else None
        d_hat, gamma_d, beta, n_inner, ok = second_layer_solve(
            state.c_post.mean, dicts.a_tau, vb, n_slices=N,
            gamma_init=state.gamma_d if warm else None,
            beta_init=beta0, learn_beta=not tied,
            per_slice_beta=opts.per_slice_beta,
            c_var=state.c_post.var if opts.beta_mode == "variance" and it > 1 else None)
        state.d_hat, state.gamma_d, state.beta_hat = d_hat, gamma_d, beta
        state.inner_iters.append(n_inner)
        inner_conv.append(ok)
        # (Q*N, N) rows (n, q) -> (Q, N*N) columns (n, m)
        prop = propagate_precision(gamma_d, dicts.a_tau).reshape(N, Q, N)
        new_gamma_c = prop.transpose(1, 0, 2).reshape(Q, N * N)
        change = relative_change(new_gamma_c, state.gamma_c, groups=N)
        if opts.include_noise_in_criterion:
            change += ((state.alpha_hat - alpha_old) / alpha_old) ** 2
        history.append(change)
        state.gamma_c = new_gamma_c
        state.outer_iter = it
        if change <= opts.outer_tol:
            converged = True
            break

    tail = history[-3:]
    oscillating = len(tail) == 3 and not (tail[0] >= tail[1] >= tail[2])
    diag = TwoLayerDiagnostics(converged, state.outer_iter, state.inner_iters, inner_conv, history,
                               state.alpha_hat, state.beta_hat, oscillating and not converged)
    return SparseTensor(_tensor_from_columns(state.d_hat, N), dicts), diag
