"""Transmit beamforming (MRT, MMSE), SINR and rates.

All quantities are linear (watts); dBm is converted at the config boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class DegenerateChannelError(ValueError):
    pass


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * np.log10(watt) + 30.0


@dataclass(frozen=True)
class PowerConfig:
    p_max: float
    noise_power: float
    allocation: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.p_max > 0:
            raise ValueError("p_max must be positive")
        if not self.noise_power > 0:
            raise ValueError("noise power must be positive")
        if self.allocation is not None:
            a = np.array(self.allocation, dtype=float)
            if a.size > 1 and np.any((a <= 0) | (a >= 1)):
                raise ValueError("allocation coefficients must lie in (0, 1)")
            if not np.isclose(a.sum(), 1.0, rtol=0, atol=1e-9):
                raise ValueError("allocation coefficients must sum to 1")
            a.setflags(write=False)
            object.__setattr__(self, "allocation", a)

    @classmethod
    def from_dbm(cls, p_max_dbm: float, noise_dbm: float, allocation=None):
        return cls(dbm_to_watt(p_max_dbm), dbm_to_watt(noise_dbm), allocation)

    def alpha(self, num_users: int) -> np.ndarray:
        if self.allocation is None:
            return np.full(num_users, 1.0 / num_users)
        if self.allocation.size != num_users:
            raise ValueError(f"allocation has {self.allocation.size} entries, need {num_users}")
        return self.allocation


@dataclass(frozen=True)
class BeamformingSolution:
    W: np.ndarray  # N x K
    sinr: np.ndarray
    rates: np.ndarray
    sum_rate: float

    def rate_floor_violations(self, r_min) -> np.ndarray:
        """1-based indices of users whose rate falls below the floor."""
        r_min = np.broadcast_to(np.asarray(r_min, dtype=float), self.rates.shape)
        return np.flatnonzero(self.rates < r_min) + 1


def mrt_weights(e, p_max: float) -> np.ndarray:
    e = np.asarray(e, dtype=complex).ravel()
    norm = np.linalg.norm(e)
    if norm == 0:
        raise DegenerateChannelError("zero effective channel; MRT is undefined")
    return np.sqrt(p_max) * e.conj() / norm


def mmse_weights(H, noise_power: float, powers, total_power: Optional[float] = None) -> np.ndarray:
    """Regularised channel inversion ``H^H (H H^H + s2 I)^-1 sqrt(P)``.

    With ``total_power`` set, W is rescaled globally so that the total
    transmit power equals it exactly.
    """
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    if not np.all(np.isfinite(H)):
        raise FloatingPointError("non-finite channel entries")
    K = H.shape[0]
    P = np.broadcast_to(np.asarray(powers, dtype=float), (K,))
    A = H @ H.conj().T + noise_power * np.eye(K)
    W = H.conj().T @ np.linalg.solve(A, np.diag(np.sqrt(P)))
    if total_power is not None:
        used = np.sum(np.abs(W) ** 2)
        if used == 0:
            raise DegenerateChannelError("all users fully blocked; MMSE weights vanish")
        W = W * np.sqrt(total_power / used)
    return W


def sinr(H, W, alpha, noise_power: float) -> np.ndarray:
    """Per-user SINR with the effective channels already blockage-masked."""
    H = np.atleast_2d(H)
    W = np.asarray(W).reshape(H.shape[1], -1)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (H.shape[0],))
    power = np.abs(H @ W) ** 2 * alpha[None, :]  # [k, i] = alpha_i |e_k w_i|^2
    signal = np.diag(power)
    interference = power.sum(axis=1) - signal
    return signal / (interference + noise_power)


def rates_and_sum(sinr_values) -> tuple[np.ndarray, float]:
    rates = np.log2(1.0 + np.asarray(sinr_values, dtype=float))
    return rates, float(rates.sum())


def beamforming_gain(e, w) -> float:
    e = np.asarray(e, dtype=complex).ravel()
    w = np.asarray(w, dtype=complex).ravel()
    return float(np.abs(e @ w) ** 2)


def solve_mrt(e, power: PowerConfig) -> BeamformingSolution:
    """Single-user MRT; a fully blocked user gets zero weights and zero rate."""
    e = np.atleast_2d(e)
    try:
        w = mrt_weights(e[0], power.p_max)
    except DegenerateChannelError:
        w = np.zeros(e.shape[1], dtype=complex)
    W = w[:, None]
    s = sinr(e, W, [1.0], power.noise_power)
    rates, total = rates_and_sum(s)
    return BeamformingSolution(W, s, rates, total)


def solve_mmse(H, power: PowerConfig) -> BeamformingSolution:
    H = np.atleast_2d(H)
    K = H.shape[0]
    alpha = power.alpha(K)
    try:
        W = mmse_weights(H, power.noise_power, power.p_max * alpha, total_power=power.p_max)
    except DegenerateChannelError:
        W = np.zeros((H.shape[1], K), dtype=complex)
    s = sinr(H, W, alpha, power.noise_power)
    rates, total = rates_and_sum(s)
    return BeamformingSolution(W, s, rates, total)
