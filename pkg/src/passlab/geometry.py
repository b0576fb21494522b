"""Physical layout: waveguides, pinching-antenna positions and users.

Indices in the public API (``pa_coords``, violation reports) are 1-based to
match waveguide/antenna numbering; arrays are stored 0-based.  Antennas are
flattened waveguide-major, so antenna ``l`` of waveguide ``n`` sits at row
``(n - 1) * L + (l - 1)`` of every M-length vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

# Slack for floating-point round-off in placement checks (meters).
PLACEMENT_ATOL = 1e-9


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class SystemGeometry:
    num_waveguides: int
    pas_per_waveguide: int
    waveguide_length: float
    region_depth: float
    mount_height: float
    waveguide_spacing: float
    min_pa_spacing: float = 0.0

    def __post_init__(self):
        if self.num_waveguides < 1 or self.pas_per_waveguide < 1:
            raise ValueError("need at least one waveguide and one antenna per waveguide")
        for name in ("waveguide_length", "region_depth", "mount_height", "waveguide_spacing"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.min_pa_spacing < 0:
            raise ValueError("min_pa_spacing must be non-negative")
        if (self.num_waveguides - 1) * self.waveguide_spacing > self.region_depth + PLACEMENT_ATOL:
            raise ValueError(
                f"{self.num_waveguides} waveguides spaced {self.waveguide_spacing} m "
                f"do not fit in region depth {self.region_depth} m"
            )

    @property
    def num_antennas(self) -> int:
        return self.num_waveguides * self.pas_per_waveguide

    def waveguide_y(self) -> np.ndarray:
        """y-coordinate of every waveguide, shape (N,)."""
        return np.arange(self.num_waveguides) * self.waveguide_spacing

    def feed_point(self, n: int) -> np.ndarray:
        _check_index(n, self.num_waveguides, "waveguide")
        return np.array([0.0, (n - 1) * self.waveguide_spacing, self.mount_height])


@dataclass(frozen=True)
class PaLayout:
    """x-coordinates of all PAs, an L x N matrix (column n = waveguide n)."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2:
            raise ShapeError(f"layout must be an L x N matrix, got shape {pos.shape}")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def shape(self) -> tuple[int, int]:
        return self.positions.shape

    @classmethod
    def uniform(cls, geometry: SystemGeometry, offset: float = 0.0, pitch: Optional[float] = None):
        L, N = geometry.pas_per_waveguide, geometry.num_waveguides
        if pitch is None:
            pitch = geometry.waveguide_length / (L - 1) if L > 1 else 0.0
        column = offset + pitch * np.arange(L)
        return cls(np.repeat(column[:, None], N, axis=1))


@dataclass(frozen=True)
class UserState:
    positions: np.ndarray
    velocities: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.atleast_2d(np.array(self.positions, dtype=float))
        if pos.shape[1] == 2:
            pos = np.hstack([pos, np.zeros((pos.shape[0], 1))])
        if pos.shape[1] != 3:
            raise ShapeError(f"user positions must be K x 3, got {pos.shape}")
        if np.any(pos[:, 2] != 0.0):
            raise ValueError("users must sit at height 0")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.velocities is not None:
            vel = np.atleast_2d(np.array(self.velocities, dtype=float))
            if vel.shape != (pos.shape[0], 2):
                raise ShapeError(f"velocities must be K x 2, got {vel.shape}")
            vel.setflags(write=False)
            object.__setattr__(self, "velocities", vel)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def check_region(self, geometry: SystemGeometry) -> None:
        x, y = self.positions[:, 0], self.positions[:, 1]
        bad = (x < -PLACEMENT_ATOL) | (x > geometry.waveguide_length + PLACEMENT_ATOL)
        bad |= (y < -PLACEMENT_ATOL) | (y > geometry.region_depth + PLACEMENT_ATOL)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0]) + 1
            raise ValueError(f"user {k} at {self.positions[k - 1].tolist()} lies outside the region")


@dataclass(frozen=True)
class LayoutViolation:
    waveguide: int
    antenna: int
    constraint: str  # "bounds" or "spacing"

    def __str__(self):
        return f"waveguide {self.waveguide}, antenna {self.antenna}: {self.constraint} constraint violated"


@dataclass(frozen=True)
class LayoutCheck:
    violation: Optional[LayoutViolation] = None

    @property
    def ok(self) -> bool:
        return self.violation is None

    def __bool__(self):
        return self.ok


def _check_index(i: int, size: int, what: str) -> None:
    if not 1 <= i <= size:
        raise IndexError(f"{what} index {i} out of range 1..{size}")


def check_shape(geometry: SystemGeometry, layout: PaLayout) -> None:
    expected = (geometry.pas_per_waveguide, geometry.num_waveguides)
    if layout.shape != expected:
        raise ShapeError(f"layout has shape {layout.shape}, geometry expects {expected}")


def validate_layout(geometry: SystemGeometry, layout: PaLayout) -> LayoutCheck:
    """Check the bound and minimum-spacing constraints, reporting the first violation.

    Waveguides are scanned in order; within a waveguide antennas are scanned
    in order and the bound check precedes the spacing check.
    """
    check_shape(geometry, layout)
    X = layout.positions
    L, N = X.shape
    for n in range(N):
        for l in range(L):
            x = X[l, n]
            if not (-PLACEMENT_ATOL <= x <= geometry.waveguide_length + PLACEMENT_ATOL):
                return LayoutCheck(LayoutViolation(n + 1, l + 1, "bounds"))
            if l > 0 and x - X[l - 1, n] < geometry.min_pa_spacing - PLACEMENT_ATOL:
                return LayoutCheck(LayoutViolation(n + 1, l + 1, "spacing"))
    return LayoutCheck()


def pa_coords(geometry: SystemGeometry, layout: PaLayout, n: int, l: int) -> np.ndarray:
    """Cartesian position of antenna ``l`` on waveguide ``n`` (both 1-based)."""
    check_shape(geometry, layout)
    _check_index(n, geometry.num_waveguides, "waveguide")
    _check_index(l, geometry.pas_per_waveguide, "antenna")
    return np.array(
        [layout.positions[l - 1, n - 1], (n - 1) * geometry.waveguide_spacing, geometry.mount_height]
    )


def pa_positions(geometry: SystemGeometry, positions: np.ndarray) -> np.ndarray:
    """Coordinates of every PA for one or many layouts.

    ``positions`` has shape (..., L, N); the result has shape (..., M, 3) in
    waveguide-major order.
    """
    X = np.asarray(positions, dtype=float)
    L, N = X.shape[-2:]
    xs = np.swapaxes(X, -1, -2).reshape(X.shape[:-2] + (N * L,))
    ys = np.broadcast_to(np.repeat(geometry.waveguide_y(), L), xs.shape)
    zs = np.full(xs.shape, geometry.mount_height)
    return np.stack([xs, ys, zs], axis=-1)


def user_pa_distances(geometry: SystemGeometry, positions: np.ndarray, users: np.ndarray) -> np.ndarray:
    """Distances between every PA and every user, shape (..., M, K)."""
    pas = pa_positions(geometry, positions)
    U = np.atleast_2d(np.asarray(users, dtype=float))
    diff = pas[..., :, None, :] - U
    return np.sqrt(np.sum(diff * diff, axis=-1))


def min_user_pa_distance(geometry: SystemGeometry, layout: PaLayout, user) -> float:
    check_shape(geometry, layout)
    user = np.asarray(user, dtype=float)
    if user.shape == (2,):
        user = np.append(user, 0.0)
    return float(user_pa_distances(geometry, layout.positions, user[None, :]).min())
