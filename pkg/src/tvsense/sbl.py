"""Single-layer variational Bayesian inference for ``Y = Phi X + W``.

Every column of ``X`` has its own element-wise Gamma precisions, the noise
precision is shared.  The closed-form conjugate updates here are reused by
both layers of the two-layer estimator and by the MUSIC-aided second stage.

Posterior moments are evaluated per column.  When the dictionary is wide
(``M < P``) the ``P x P`` covariance is never formed: the Woodbury identity
reduces each column to an ``M x M`` Cholesky factorization.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np


@dataclass(frozen=True)
class VbiOptions:
    """Gamma hyperprior ``(shape, rate)`` shared by all precisions, plus the
    convergence threshold, iteration cap and hard-prune level."""

    shape: float = 1e-4
    rate: float = 1e-4
    tol: float = 1e-5
    max_iter: int = 167
    prune: float = 1e12
    noise_precision0: float = 1.0
    precision0: float = 1.0

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma shape and rate must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def with_(self, **kw) -> "VbiOptions":
        return replace(self, **kw)


class PosteriorMoments(NamedTuple):
    """Column-wise Gaussian posterior summary.

    mean : (P, C) posterior means
    var : (P, C) posterior variances (diagonal of each column covariance)
    trace : (C,) ``tr(Phi Sigma_c Phi^H)`` per column
    """

    mean: np.ndarray
    var: np.ndarray
    trace: np.ndarray


@dataclass
class VbiState:
    noise_precision_mean: float
    posterior_means: np.ndarray
    posterior_vars: np.ndarray
    posterior_traces: np.ndarray
    precision_means: np.ndarray
    iter_count: int = 0
    converged: bool = False
    history: list = None


def _as_columns(Y):
    Y = np.asarray(Y)
    return Y[:, None] if Y.ndim == 1 else Y


def projected_trace(Phi: np.ndarray, Sigma: np.ndarray) -> float:
    """``tr(Phi Sigma Phi^H)`` for one full covariance."""
    return float(np.real(np.einsum("ij,jk,ik->", Phi, Sigma, Phi.conj())))


def update_noise_precision(Y, Phi, means, traces, opts: VbiOptions, extra_rate: float = 0.0) -> float:
    """Mean of the Gamma posterior of the noise precision.

    ``(a + #measurements) / (b + sum ||y - Phi u||^2 + sum tr(Phi Sigma Phi^H))``.
    ``extra_rate`` adds the expected energy of uncertain measurements, i.e.
    the summed posterior variances of ``Y`` when ``Y`` is itself an estimate.
    """
    Y = _as_columns(Y)
    means = _as_columns(means)
    resid = Y - Phi @ means
    b = opts.rate + float(np.sum(np.abs(resid) ** 2)) + float(np.sum(traces)) + extra_rate
    if not np.isfinite(b):
        raise FloatingPointError("non-finite residual in noise-precision update")
    return (opts.shape + Y.size) / b


def noise_precision_cap(Y, opts: VbiOptions) -> float:
    """Largest admissible noise precision: a noise floor of ``1 / opts.prune``
    times the mean measurement power.  Without it the precision of noiseless
    data grows geometrically and the iteration never settles."""
    power = float(np.mean(np.abs(np.asarray(Y)) ** 2))
    return opts.prune / power if power > 0 else np.inf


def update_posterior(y, Phi, alpha_hat: float, gamma):
    """Reference single-column Gaussian posterior.

    ``Sigma = (alpha Phi^H Phi + diag(gamma))^-1`` and ``u = alpha Sigma Phi^H y``,
    solved through a Cholesky factor of the Hermitian system matrix.
    """
    gamma = np.asarray(gamma, dtype=float)
    if alpha_hat <= 0 or np.any(gamma <= 0):
        raise ValueError("precisions must be strictly positive")
    A = alpha_hat * (Phi.conj().T @ Phi) + np.diag(gamma)
    L = np.linalg.cholesky(A)
    Linv = np.linalg.solve(L, np.eye(A.shape[0]))
    Sigma = Linv.conj().T @ Linv
    u = alpha_hat * Sigma @ (Phi.conj().T @ np.asarray(y))
    return u, Sigma


def posterior_moments(Y, Phi, alpha_hat: float, gamma) -> PosteriorMoments:
    """Batched posterior means, variances and projected traces for all columns.

    ``gamma`` is a ``(P, C)`` array of element precisions, one column per
    measurement column.
    """
    Y = _as_columns(Y)
    Phi = np.asarray(Phi)
    M, P = Phi.shape
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim == 1:
        gamma = np.repeat(gamma[:, None], Y.shape[1], axis=1)
    if alpha_hat <= 0 or np.any(gamma <= 0):
        raise ValueError("precisions must be strictly positive")
    if M < P:
        return _moments_woodbury(Y, Phi, alpha_hat, gamma)
    return _moments_direct(Y, Phi, alpha_hat, gamma)


def _moments_direct(Y, Phi, alpha, gamma):
    P = Phi.shape[1]
    G = Phi.conj().T @ Phi
    A = alpha * G[None] + np.einsum("pc,pq->cpq", gamma, np.eye(P))
    np.linalg.cholesky(A)  # raises LinAlgError if not positive definite
    Sigma = np.linalg.inv(A)
    Sigma = 0.5 * (Sigma + np.conj(np.swapaxes(Sigma, 1, 2)))
    rhs = (Phi.conj().T @ Y).T[..., None]                       # (C, P, 1)
    mean = alpha * (Sigma @ rhs)[..., 0].T
    var = np.real(np.diagonal(Sigma, axis1=1, axis2=2)).T
    trace = np.real(np.einsum("cij,ji->c", Sigma, G))
    return PosteriorMoments(mean, var, trace)


def _moments_woodbury(Y, Phi, alpha, gamma):
    M, P = Phi.shape
    g = 1.0 / gamma                                            # prior variances (P, C)
    outer = (Phi.T[:, :, None] * Phi.conj().T[:, None, :]).reshape(P, M * M)
    B = (g.T @ outer).reshape(-1, M, M) + np.eye(M) / alpha    # (C, M, M)
    np.linalg.cholesky(B)  # positive-definiteness guard
    Binv = np.linalg.inv(B)
    Binv = 0.5 * (Binv + np.conj(np.swapaxes(Binv, 1, 2)))
    z = (Binv @ Y.T[..., None])[..., 0]                        # (C, M)
    mean = g * (Phi.conj().T @ z.T)
    quad = np.real(outer.conj() @ Binv.reshape(-1, M * M).T)   # phi_p^H Binv_c phi_p
    var = np.maximum(g - g * g * quad, 0.0)
    trace = (M - np.real(np.trace(Binv, axis1=1, axis2=2)) / alpha) / alpha
    return PosteriorMoments(mean, var, np.maximum(trace, 0.0))


def update_element_precisions(means, var, opts: VbiOptions, cap: Optional[float] = None) -> np.ndarray:
    """Gamma posterior means ``(a + 1) / (b + |u|^2 + Sigma_pp)``, clamped at
    ``cap`` (``opts.prune`` by default)."""
    gamma = (opts.shape + 1.0) / (opts.rate + np.abs(means) ** 2 + var)
    return np.minimum(gamma, opts.prune if cap is None else cap)


def relative_change(new, old, groups: int = 1) -> float:
    """``sum_g ||new_g - old_g||^2 / ||old_g||^2`` over equal column blocks."""
    new = np.asarray(new)
    old = np.asarray(old)
    if new.shape[-1] % groups == 0:
        shape = new.shape[:-1] + (groups, new.shape[-1] // groups)
        o = old.reshape(shape)
        num = np.sum(np.abs(new.reshape(shape) - o) ** 2, axis=tuple(i for i in range(len(shape)) if i != len(shape) - 2))
        den = np.sum(np.abs(o) ** 2, axis=tuple(i for i in range(len(shape)) if i != len(shape) - 2))
        return float(np.sum(np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)))
    total = 0.0
    for n_blk, o_blk in zip(np.array_split(new, groups, axis=-1), np.array_split(old, groups, axis=-1)):
        denom = float(np.sum(np.abs(o_blk) ** 2))
        total += float(np.sum(np.abs(n_blk - o_blk) ** 2)) / denom if denom > 0 else 0.0
    return total


def vbi_solve(Y, Phi, opts: VbiOptions = VbiOptions(), *, gamma_init=None,
              noise_precision_init: Optional[float] = None, groups: int = 1,
              max_iter: Optional[int] = None, extra_rate: float = 0.0,
              learn_noise: bool = True):
    """Iterate noise precision, posterior and element precisions to a fixed point.

    Parameters
    ----------
    Y : (M, C) measurements, one column per snapshot.
    Phi : (M, P) dictionary.
    gamma_init, noise_precision_init :
        Warm-start values; default to ``opts.precision0`` / ``opts.noise_precision0``
        divided by the mean measurement power.
    groups :
        Number of equal column blocks summed in the convergence metric.
    extra_rate :
        Added to the noise-precision rate every sweep (see
        :func:`update_noise_precision`).
    learn_noise :
        When False the noise precision stays at its initial value.

    Returns
    -------
    X_hat : (P, C) posterior means, pruned entries set to zero.
    state : VbiState
    """
    Y = _as_columns(Y)
    Phi = np.asarray(Phi)
    M, P = Phi.shape
    if Y.shape[0] != M:
        raise ValueError(f"Y has {Y.shape[0]} rows but Phi has {M}")
    C = Y.shape[1]
    cap = opts.max_iter if max_iter is None else max_iter
    if not np.any(Y):
        alpha = opts.noise_precision0 if noise_precision_init is None else float(noise_precision_init)
        zeros = np.zeros((P, C), dtype=complex)
        state = VbiState(alpha, zeros, np.zeros((P, C)), np.zeros(C),
                         np.full((P, C), opts.prune), 1, True, [0.0])
        return zeros, state

    # default initial precisions are relative to the measurement power
    power = float(np.mean(np.abs(Y) ** 2))
    gamma = (np.full((P, C), opts.precision0 / power) if gamma_init is None
             else np.array(gamma_init, dtype=float).reshape(P, C))
    alpha = opts.noise_precision0 / power if noise_precision_init is None else float(noise_precision_init)
    cap_alpha = noise_precision_cap(Y, opts)
    cap_gamma = opts.prune / power                      # hard-prune level in data units
    post = posterior_moments(Y, Phi, alpha, gamma)
    history = []
    converged = False
    it = 0
    for it in range(1, cap + 1):
        if learn_noise:
            alpha = min(update_noise_precision(Y, Phi, post.mean, post.trace, opts, extra_rate), cap_alpha)
            post = posterior_moments(Y, Phi, alpha, gamma)
        new_gamma = update_element_precisions(post.mean, post.var, opts, cap_gamma)
        change = relative_change(new_gamma, gamma, groups)
        history.append(change)
        gamma = new_gamma
        if change <= opts.tol:
            converged = True
            break
    X = np.where(gamma >= cap_gamma, 0.0, post.mean)
    state = VbiState(alpha, X, post.var, post.trace, gamma, it, converged, history)
    return X, state
