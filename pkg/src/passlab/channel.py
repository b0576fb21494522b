"""In-waveguide response, free-space user channels, blockage and effective channels.

Channel rows follow the conjugated convention: ``h[k, m]`` is the entry of
``h_k^H`` for antenna ``m``, i.e. ``eta * exp(-i kappa d) / d``.  The
effective channel of user k is the 1 x N row ``(delta_k * h_k^H) @ G``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .geometry import (
    PaLayout,
    ShapeError,
    SystemGeometry,
    UserState,
    check_shape,
    user_pa_distances,
)

SPEED_OF_LIGHT = 2.998e8


@dataclass(frozen=True)
class RadioConfig:
    carrier_freq: float
    n_eff: float = 1.4
    lightspeed: float = SPEED_OF_LIGHT
    # Free-space amplitude; None selects the Friis value lambda / (4 pi).
    eta: Optional[float] = None

    def __post_init__(self):
        if not self.carrier_freq > 0:
            raise ValueError("carrier frequency must be positive")
        if self.n_eff < 1:
            raise ValueError("effective refractive index must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")

    @property
    def wavelength(self) -> float:
        return self.lightspeed / self.carrier_freq

    @property
    def guided_wavelength(self) -> float:
        return self.wavelength / self.n_eff

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def gain(self) -> float:
        """The free-space amplitude eta."""
        return self.eta if self.eta is not None else self.wavelength / (4 * math.pi)


@dataclass(frozen=True)
class BlockageModel:
    density: float = 0.0
    mode: Literal["distance-exponential", "deterministic-mask"] = "distance-exponential"
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.density < 0:
            raise ValueError("blockage density must be non-negative")
        if self.mode not in ("distance-exponential", "deterministic-mask"):
            raise ValueError(f"unknown blockage mode {self.mode!r}")
        if self.mode == "deterministic-mask" and self.mask is None:
            raise ValueError("deterministic-mask mode needs a mask")


@dataclass(frozen=True)
class ChannelState:
    h: np.ndarray  # K x M, rows are h_k^H
    mask: np.ndarray  # M x K
    G: np.ndarray  # M x N
    effective: np.ndarray = field(default=None)  # K x N

    def __post_init__(self):
        if self.effective is None:
            object.__setattr__(self, "effective", effective_channel(self.h, self.mask, self.G))


class SingularityError(ValueError):
    pass


def inwaveguide_response(cfg: RadioConfig, L: int, x):
    """Response from the feed point to a PA at distance ``x`` along the waveguide."""
    if L < 1:
        raise ValueError("L must be at least 1")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("in-waveguide distance must be non-negative")
    out = np.exp(-1j * (2 * np.pi / cfg.guided_wavelength) * x) / np.sqrt(L)
    return out[()] if out.ndim == 0 else out


def build_waveguide_matrix(cfg: RadioConfig, geometry: SystemGeometry, layout: PaLayout) -> np.ndarray:
    check_shape(geometry, layout)
    L, N = layout.shape
    g = inwaveguide_response(cfg, L, layout.positions)  # L x N
    G = np.zeros((N * L, N), dtype=complex)
    for n in range(N):
        G[n * L:(n + 1) * L, n] = g[:, n]
    return G


def freespace_from_distance(cfg: RadioConfig, d):
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise SingularityError("free-space channel is singular at zero distance")
    return cfg.gain * np.exp(-1j * cfg.wavenumber * d) / d


def freespace_channel(cfg: RadioConfig, pa_coord, user_coord):
    diff = np.asarray(pa_coord, dtype=float) - np.asarray(user_coord, dtype=float)
    out = freespace_from_distance(cfg, np.sqrt(np.sum(diff * diff, axis=-1)))
    return out[()] if out.ndim == 0 else out


def channel_rows(cfg: RadioConfig, geometry: SystemGeometry, layout: PaLayout, users) -> np.ndarray:
    """The K x M matrix whose rows are h_k^H."""
    check_shape(geometry, layout)
    U = users.positions if isinstance(users, UserState) else np.atleast_2d(users)
    return freespace_from_distance(cfg, user_pa_distances(geometry, layout.positions, U)).T


def expand_mask(mask, geometry: SystemGeometry, num_users: int) -> np.ndarray:
    """Normalise a blockage mask to one row per physical antenna (M x K).

    An L x K mask indexes antennas by their position on the waveguide only
    and is applied identically to every waveguide.
    """
    L, M = geometry.pas_per_waveguide, geometry.num_antennas
    if mask is None:
        return np.ones((M, num_users))
    mask = np.asarray(mask, dtype=float)
    if mask.ndim == 1:
        mask = mask[:, None]
    if mask.shape == (M, num_users):
        return mask
    if mask.shape == (L, num_users):
        return np.tile(mask, (geometry.num_waveguides, 1))
    raise ShapeError(f"mask shape {mask.shape} matches neither (L, K) nor (M, K)")


def los_probability(density: float, distance):
    return np.exp(-density * np.asarray(distance, dtype=float))


def sample_blockage(
    model: BlockageModel,
    geometry: SystemGeometry,
    layout,
    users,
    rng: np.random.Generator,
    shared: bool = True,
) -> np.ndarray:
    """Draw the LoS indicator for every (antenna, user) pair.

    ``layout`` may be a single :class:`PaLayout` (result M x K) or an array of
    layouts with shape (F, L, N) (result F x M x K).  For a stack, ``shared``
    draws one uniform per (antenna, user) and compares it with each layout's
    own LoS probability, so the realisation is held fixed across codewords
    within a trial; ``shared=False`` draws every layout independently.
    """
    U = users.positions if isinstance(users, UserState) else np.atleast_2d(users)
    positions = layout.positions if isinstance(layout, PaLayout) else np.asarray(layout)
    if model.mode == "deterministic-mask":
        mask = expand_mask(model.mask, geometry, U.shape[0])
        return np.broadcast_to(mask, positions.shape[:-2] + mask.shape).copy()
    d = user_pa_distances(geometry, positions, U)
    u = rng.random(d.shape[-2:] if shared else d.shape)
    return (u < los_probability(model.density, d)).astype(float)


def effective_channel(h: np.ndarray, mask: Optional[np.ndarray], G: np.ndarray) -> np.ndarray:
    """Rows ``(delta_k * h_k^H) @ G`` for every user, shape K x N."""
    h = np.atleast_2d(h)
    if mask is not None:
        h = h * np.asarray(mask).T
    return h @ G


def channel_state(
    cfg: RadioConfig,
    geometry: SystemGeometry,
    layout: PaLayout,
    users,
    mask=None,
) -> ChannelState:
    h = channel_rows(cfg, geometry, layout, users)
    mask = expand_mask(mask, geometry, h.shape[0])
    return ChannelState(h=h, mask=mask, G=build_waveguide_matrix(cfg, geometry, layout))


def codeword_effective_channels(
    cfg: RadioConfig,
    geometry: SystemGeometry,
    positions: np.ndarray,
    users: np.ndarray,
    mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Effective channels for a stack of layouts without forming G.

    ``positions`` is (F, L, N), ``mask`` is None, (M, K) or (F, M, K); the
    result is (F, K, N).  Equivalent to calling :func:`channel_state` per
    layout, exploiting the block-diagonal structure of G.
    """
    X = np.asarray(positions, dtype=float)
    F, L, N = X.shape
    U = np.atleast_2d(np.asarray(users, dtype=float))
    h = freespace_from_distance(cfg, user_pa_distances(geometry, X, U))  # F x M x K
    if mask is not None:
        h = h * mask
    g = inwaveguide_response(cfg, L, np.swapaxes(X, 1, 2).reshape(F, N * L))  # F x M
    contrib = (h * g[:, :, None]).reshape(F, N, L, U.shape[0])
    return np.swapaxes(contrib.sum(axis=2), 1, 2)
