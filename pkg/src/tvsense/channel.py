"""Frequency-domain time-varying channel synthesis and Doppler re-alignment.

Indices are 0-based everywhere: subcarrier ``m``, Doppler slice ``n`` and OFDM
block ``k``.  A re-aligned channel is stored as an ``(N, N, K)`` array indexed
``[n, m, k]`` so that ``slices[n]`` is the ``N x K`` matrix of Doppler slice n.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class SystemConfig:
    """OFDM sensing geometry.

    Parameters
    ----------
    n_subcarriers : int
        Number of subcarriers ``N`` (also the number of Doppler slices).
    n_blocks : int
        Number of OFDM blocks ``K``.
    subcarrier_spacing_hz : float
        Subcarrier spacing ``f0``; the bandwidth is ``N * f0``.
    carrier_hz : float
        Carrier frequency, only used for velocity/Doppler conversion.
    noise_var_rx, noise_var_est : float
        Receiver noise and channel-estimation noise variances.  Their sum is
        the per-element variance of the re-aligned measurement noise.
    periodic_doppler : bool
        Evaluate the inter-carrier window on ``n f0 - nu`` wrapped into
        ``[-N f0/2, N f0/2)``, so Doppler is periodic in ``N f0`` as for a
        DFT.  When False only the slice index is wrapped and paths beyond
        ``+-N f0/2`` fall between slices.
    """

    n_subcarriers: int = 8
    n_blocks: int = 8
    subcarrier_spacing_hz: float = 15e3
    carrier_hz: float = 150e9
    noise_var_rx: float = 0.0
    noise_var_est: float = 0.0
    periodic_doppler: bool = True

    def __post_init__(self):
        if int(self.n_subcarriers) != self.n_subcarriers or self.n_subcarriers < 1:
            raise ValueError(f"n_subcarriers must be a positive integer, got {self.n_subcarriers}")
        if int(self.n_blocks) != self.n_blocks or self.n_blocks < 1:
            raise ValueError(f"n_blocks must be a positive integer, got {self.n_blocks}")
        if not self.subcarrier_spacing_hz > 0:
            raise ValueError("subcarrier_spacing_hz must be positive")
        if not self.carrier_hz > 0:
            raise ValueError("carrier_hz must be positive")
        if self.noise_var_rx < 0 or self.noise_var_est < 0:
            raise ValueError("noise variances must be non-negative")

    @property
    def bandwidth_hz(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing_hz

    @property
    def sample_period_s(self) -> float:
        """``T0 = 1 / B``."""
        return 1.0 / self.bandwidth_hz

    @property
    def block_duration_s(self) -> float:
        """``T = N * T0 = 1 / f0``."""
        return self.n_subcarriers * self.sample_period_s

    @property
    def max_delay_s(self) -> float:
        return 1.0 / self.subcarrier_spacing_hz

    @property
    def noise_var(self) -> float:
        return self.noise_var_rx + self.noise_var_est

    @property
    def doppler_period_hz(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing_hz

    def with_noise(self, noise_var_rx: float, noise_var_est: float = 0.0) -> "SystemConfig":
        return replace(self, noise_var_rx=noise_var_rx, noise_var_est=noise_var_est)


@dataclass(frozen=True)
class Target:
    """One propagation path: complex gain, delay (s) and Doppler (Hz)."""

    gain: complex
    delay_s: float
    doppler_hz: float

    def integer_doppler(self, config: SystemConfig) -> int:
        """Integer Doppler index ``n_l`` (nearest multiple of ``f0``, halves rounded down)."""
        return int(np.ceil(self.doppler_hz / config.subcarrier_spacing_hz - 0.5))

    def fractional_doppler(self, config: SystemConfig) -> float:
        """Fractional Doppler ``xi_l`` in ``(-f0/2, f0/2]``."""
        return self.doppler_hz - self.integer_doppler(config) * config.subcarrier_spacing_hz


@dataclass(frozen=True)
class RealignedChannel:
    """Doppler-indexed channel tensor, ``slices[n, m, k]``."""

    slices: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.slices)
        if s.ndim != 3 or s.shape[0] != s.shape[1]:
            raise ValueError(f"expected an (N, N, K) array, got shape {s.shape}")

    @property
    def n_subcarriers(self) -> int:
        return self.slices.shape[0]

    @property
    def n_blocks(self) -> int:
        return self.slices.shape[2]

    def measurement(self, n: int) -> np.ndarray:
        """``Y(n) = H(n)^H`` with shape ``(K, N)``."""
        return self.slices[n].conj().T


def doppler_from_velocity(velocity_mps: float, carrier_hz: float) -> float:
    """One-way Doppler shift ``v * fc / c``."""
    return velocity_mps * carrier_hz / SPEED_OF_LIGHT


def signed_index(i, n: int):
    """Map ``0..N-1`` onto ``-(N-1)//2 .. N//2`` (index ``N/2`` stays positive)."""
    i = np.mod(i, n)
    return np.where(i > n // 2, i - n, i)


def g2(f_hz, config: SystemConfig):
    """Spectrum of the rectangular block window, ``sinc(f T)`` with unit peak."""
    return np.sinc(np.asarray(f_hz) * config.block_duration_s)


def wrap_doppler(f_hz, config: SystemConfig):
    """Wrap a frequency into ``[-N f0/2, N f0/2)``."""
    period = config.doppler_period_hz
    return np.mod(np.asarray(f_hz, dtype=float) + period / 2, period) - period / 2


def ici_window(offset_hz, config: SystemConfig):
    """Weight of a path at frequency offset ``n f0 - nu`` in slice ``n``."""
    if config.periodic_doppler:
        offset_hz = wrap_doppler(offset_hz, config)
    return g2(offset_hz, config)


def ici_window_prime(offset_hz, config: SystemConfig):
    """Derivative of :func:`ici_window` with respect to the offset."""
    if config.periodic_doppler:
        offset_hz = wrap_doppler(offset_hz, config)
    return g2_prime(offset_hz, config)


def g2_prime(f_hz, config: SystemConfig):
    """Derivative of :func:`g2` with respect to frequency."""
    T = config.block_duration_s
    x = np.asarray(f_hz, dtype=float) * T
    with np.errstate(divide="ignore", invalid="ignore"):
        d = (np.cos(np.pi * x) - np.sinc(x)) / x
    d = np.where(np.abs(x) < 1e-8, -(np.pi ** 2) * x / 3.0, d)
    return T * d


def _check_targets(config: SystemConfig, targets: Sequence[Target]):
    for t in targets:
        if not 0.0 <= t.delay_s < config.max_delay_s:
            raise ValueError(
                f"target delay {t.delay_s!r} s outside [0, 1/f0) = [0, {config.max_delay_s!r})")


def _target_arrays(targets: Sequence[Target]):
    h = np.array([complex(t.gain) for t in targets], dtype=complex)
    tau = np.array([t.delay_s for t in targets], dtype=float)
    nu = np.array([t.doppler_hz for t in targets], dtype=float)
    return h, tau, nu


def build_fd_channel(config: SystemConfig, targets: Sequence[Target], block_index: int) -> np.ndarray:
    """Frequency-domain channel matrix ``H_fd(k)`` of one OFDM block, shape ``(N, N)``.

    Entry ``(n, m)`` couples subcarrier ``m`` into subcarrier ``n`` through the
    Doppler-index difference ``(n - m) mod N``, wrapped to a signed integer,
    with weight :func:`ici_window`.
    """
    if not 0 <= block_index < config.n_blocks:
        raise ValueError(f"block_index {block_index} outside [0, {config.n_blocks})")
    _check_targets(config, targets)
    N = config.n_subcarriers
    H = np.zeros((N, N), dtype=complex)
    if not targets:
        return H
    f0, T = config.subcarrier_spacing_hz, config.block_duration_s
    h, tau, nu = _target_arrays(targets)
    idx = np.arange(N)
    diff = signed_index(idx[:, None] - idx[None, :], N)
    for hl, tl, vl in zip(h, tau, nu):
        phase = hl * np.exp(2j * np.pi * vl * block_index * T)
        H += phase * ici_window(diff * f0 - vl, config) * np.exp(-2j * np.pi * idx[None, :] * f0 * tl)
    return H


def realign(per_block: Sequence[np.ndarray]) -> RealignedChannel:
    """Circularly shift column ``m`` of every block up by ``m`` rows.

    Slice ``n`` entry ``(m, k)`` is ``per_block[k][(n + m) mod N, m]``.
    """
    blocks = [np.asarray(b) for b in per_block]
    if not blocks:
        raise ValueError("need at least one block")
    N = blocks[0].shape[0]
    for b in blocks:
        if b.shape != (N, N):
            raise ValueError(f"every block must be {N}x{N}, got {b.shape}")
    stack = np.stack(blocks, axis=-1)  # (N, N, K) indexed [row, col, k]
    n = np.arange(N)[:, None]
    m = np.arange(N)[None, :]
    return RealignedChannel(stack[(n + m) % N, m, :])


def inverse_realign(channel: RealignedChannel) -> list[np.ndarray]:
    """Undo :func:`realign`, returning the ``K`` per-block ``N x N`` matrices."""
    s = channel.slices
    N = s.shape[0]
    out = np.empty_like(s)
    n = np.arange(N)[:, None]
    m = np.arange(N)[None, :]
    out[(n + m) % N, m, :] = s
    return [out[:, :, k] for k in range(s.shape[2])]


def synthesize(config: SystemConfig, targets: Sequence[Target]) -> RealignedChannel:
    """Noiseless re-aligned channel, computed directly in the Doppler-indexed form."""
    _check_targets(config, targets)
    N, K = config.n_subcarriers, config.n_blocks
    out = np.zeros((N, N, K), dtype=complex)
    if not targets:
        return RealignedChannel(out)
    f0, T = config.subcarrier_spacing_hz, config.block_duration_s
    h, tau, nu = _target_arrays(targets)
    n = signed_index(np.arange(N), N)
    sinc = ici_window(n[:, None] * f0 - nu[None, :], config)              # (N, L)
    steer = np.exp(-2j * np.pi * np.arange(N)[:, None] * f0 * tau[None, :])  # (N, L)
    blocks = np.exp(2j * np.pi * np.arange(K)[:, None] * T * nu[None, :])   # (K, L)
    out = np.einsum("l,nl,ml,kl->nmk", h, sinc, steer, blocks)
    return RealignedChannel(out)


def add_noise(channel: RealignedChannel, sigma2: float, rng: np.random.Generator) -> RealignedChannel:
    """Add circularly-symmetric complex Gaussian noise of per-element variance ``sigma2``."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    if sigma2 == 0:
        return RealignedChannel(channel.slices.copy())
    shape = channel.slices.shape
    noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return RealignedChannel(channel.slices + np.sqrt(sigma2 / 2.0) * noise)
