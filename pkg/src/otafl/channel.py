"""Fading multiple-access channel with blind transmitters and multi-antenna combining.

Scheduled users transmit ``alpha * update`` simultaneously. Each receive antenna
sees the superposition weighted by i.i.d. CN(0, sigma_h2) gains plus CN(0, sigma_z2)
noise. The server combines antennas with the conjugate of the summed gains and
rescales the real and imaginary parts to recover the average update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import unpack_complex


@dataclass(frozen=True)
class ChannelConfig:
    K: int = 200
    sigma_h2: float = 1.0
    sigma_z2: float = 0.1
    alpha: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.sigma_h2 > 0:
            raise ValueError("sigma_h2 must be positive")
        if self.sigma_z2 < 0:
            raise ValueError("sigma_z2 must be non-negative")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class ChannelRealization:
    """Gains indexed ``(user, antenna, symbol)`` and noise indexed ``(antenna, symbol)``."""

    gains: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=np.complex128)
        noise = np.asarray(self.noise, dtype=np.complex128)
        if gains.ndim != 3 or noise.shape != gains.shape[1:]:
            raise ValueError(f"inconsistent shapes: gains {gains.shape}, noise {noise.shape}")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "noise", noise)


def _cn(rng, shape, variance):
    if variance == 0:
        return np.zeros(shape, dtype=np.complex128)
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channel(num_users: int, N: int, cfg: ChannelConfig, rng_seed) -> ChannelRealization:
    """Draw one fast-fading realization for ``num_users`` users over ``cfg.K`` antennas."""
    if num_users < 1 or N < 1:
        raise ValueError("num_users and N must be positive")
    rng = np.random.default_rng(rng_seed)
    gains = _cn(rng, (num_users, cfg.K, N), cfg.sigma_h2)
    noise = _cn(rng, (cfg.K, N), cfg.sigma_z2)
    return ChannelRealization(gains, noise)


def orthogonal_realization(user_ids, K: int, N: int, sigma_h2: float = 1.0) -> ChannelRealization:
    """Noiseless realization with unit-modulus DFT gains, orthogonal across users.

    Gains are ``sqrt(sigma_h2) * exp(2j*pi*u*k/K)`` for user id ``u``; the
    interference term vanishes exactly and combining returns
    ``sigma_h2 * sum(x_m)``, so the estimate equals the true average. User ids
    must be distinct modulo ``K``.
    """
    user_ids = np.asarray(user_ids, dtype=np.int64)
    if np.unique(user_ids % K).size != user_ids.size:
        raise ValueError("user ids must be distinct modulo K")
    k = np.arange(K)
    phase = np.exp(2j * np.pi * np.outer(user_ids, k) / K)
    gains = np.sqrt(sigma_h2) * np.repeat(phase[:, :, None], N, axis=2)
    return ChannelRealization(gains, np.zeros((K, N), dtype=np.complex128))


def _check(updates, realization):
    x = np.atleast_2d(np.asarray(updates, dtype=np.complex128))
    if x.shape != (realization.gains.shape[0], realization.gains.shape[2]):
        raise ValueError(
            f"{x.shape[0]} updates of length {x.shape[1]} do not match realization "
            f"gains {realization.gains.shape}"
        )
    return x


def received_per_antenna(updates, realization: ChannelRealization, cfg: ChannelConfig) -> np.ndarray:
    """Antenna outputs ``y_k = sum_m h_mk * (alpha x_m) + z_k``, shape ``(K, N)``."""
    x = cfg.alpha * _check(updates, realization)
    return np.einsum("mkn,mn->kn", realization.gains, x) + realization.noise


def transmit_and_combine(updates, realization: ChannelRealization, cfg: ChannelConfig) -> np.ndarray:
    y = received_per_antenna(updates, realization, cfg)
    hsum = realization.gains.sum(axis=0)
    return np.mean(np.conj(hsum) * y, axis=0)


def decompose(updates, realization: ChannelRealization, cfg: ChannelConfig):
    """Split the combined signal into ``(signal, interference, noise)`` terms.

    The three terms sum to :func:`transmit_and_combine` up to rounding.
    """
    x = cfg.alpha * _check(updates, realization)
    h = realization.gains
    K = h.shape[1]
    power = np.mean(np.abs(h) ** 2, axis=1)
    signal = np.sum(power * x, axis=0)
    # for each transmitter m', sum over receivers m != m' of conj(h_m) h_m'
    others = h.sum(axis=0, keepdims=True) - h
    cross = np.sum(np.conj(others) * h, axis=1) / K
    interference = np.sum(cross * x, axis=0)
    noise = np.mean(np.conj(h.sum(axis=0)) * realization.noise, axis=0)
    return signal, interference, noise


def estimate_aggregate(y_ps, num_scheduled: int, cfg: ChannelConfig) -> np.ndarray:
    """Recover the length-``2N`` average update from the combined signal."""
    if num_scheduled < 1:
        raise ValueError("at least one scheduled user is required")
    return unpack_complex(y_ps) / (num_scheduled * cfg.sigma_h2 * cfg.alpha)
