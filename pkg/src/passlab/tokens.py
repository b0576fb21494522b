"""Bounding-box series: synthesis from trajectories, RevIN, patching and embedding."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import ShapeError

REVIN_EPS = 1e-8


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera looking along +x from ``position``.

    Box centres are affine in the user's ground position; the box side is
    ``ref_size * ref_distance / distance``.
    """

    position: tuple = (-1.0, 6.0, 10.0)
    region: tuple = (30.0, 12.0)
    ref_size: float = 0.1
    ref_distance: float = 10.0


@dataclass(frozen=True)
class RevinStats:
    mean: np.ndarray
    std: np.ndarray


def synthesize_boxes(trajectory, camera: CameraModel) -> np.ndarray:
    """Project a T x 2 (or T x 3) trajectory to a 4 x T box series (x, y, w, h)."""
    P = np.atleast_2d(np.asarray(trajectory, dtype=float))
    cam = np.asarray(camera.position, dtype=float)
    if np.any(P[:, 0] <= cam[0]):
        raise ProjectionError("user lies behind the camera plane")
    ground = np.hstack([P[:, :2], np.zeros((P.shape[0], 1))])
    dist = np.linalg.norm(ground - cam, axis=1)
    side = camera.ref_size * camera.ref_distance / dist
    return np.vstack([P[:, 0] / camera.region[0], P[:, 1] / camera.region[1], side, side])


def load_boxes_csv(path) -> np.ndarray:
    """Read detector output with columns t, x, y, w, h (rows sorted by t)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no boxes")
    rows.sort(key=lambda r: float(r["t"]))
    B = np.array([[float(r[c]) for r in rows] for c in ("x", "y", "w", "h")])
    if np.any(B[2:] <= 0):
        raise ValueError(f"{path}: box width and height must be positive")
    return B


def revin_normalize(B) -> tuple[np.ndarray, RevinStats]:
    """Per-row standardisation with the population std, floored at REVIN_EPS."""
    B = np.asarray(B, dtype=float)
    mean = B.mean(axis=-1)
    std = np.maximum(B.std(axis=-1), REVIN_EPS)
    return (B - mean[..., None]) / std[..., None], RevinStats(mean, std)


def revin_denormalize(Z, stats: RevinStats) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.shape[:-1] != np.shape(stats.mean):
        raise ShapeError(f"series rows {Z.shape[:-1]} do not match stats {np.shape(stats.mean)}")
    return Z * stats.std[..., None] + stats.mean[..., None]


def num_patches(T: int, patch_len: int, stride: int) -> int:
    return (T - patch_len) // stride + 1


def patchify(row, patch_len: int, stride: int) -> np.ndarray:
    """Sliding windows over the last axis: (..., T) -> (..., N_P, patch_len).

    Trailing samples that do not fill a whole patch are dropped.
    """
    row = np.asarray(row, dtype=float)
    T = row.shape[-1]
    if patch_len < 1 or stride < 1:
        raise ValueError("patch length and stride must be positive")
    if T < patch_len:
        raise ValueError(f"series of length {T} is shorter than one patch ({patch_len})")
    starts = stride * np.arange(num_patches(T, patch_len, stride))
    return row[..., starts[:, None] + np.arange(patch_len)]


def embed_patches(patches, EM, m) -> np.ndarray:
    patches = np.asarray(patches, dtype=float)
    EM = np.asarray(EM, dtype=float)
    if patches.shape[-1] != EM.shape[0] or np.shape(m) != (EM.shape[1],):
        raise ShapeError(
            f"patches {patches.shape}, projection {EM.shape} and bias {np.shape(m)} do not agree"
        )
    return patches @ EM + m


def box_features(B, patch_len: int, stride: int) -> np.ndarray:
    """Flattened predictor input for one 4 x T series.

    Layout: the RevIN-normalised patches of the four attributes
    (4 * N_P * patch_len values, attribute-major), then the four means and
    four stds.  The stats keep the absolute position that normalisation
    removes.
    """
    Z, stats = revin_normalize(B)
    P = patchify(Z, patch_len, stride)
    return np.concatenate([P.ravel(), stats.mean, stats.std])


def feature_length(T: int, patch_len: int, stride: int) -> int:
    return 4 * num_patches(T, patch_len, stride) * patch_len + 8
