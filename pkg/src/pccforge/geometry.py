"""Point-cloud containers, validation, and geometric pipeline primitives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel


def check_point_cloud(points, min_points: int = 1) -> np.ndarray:
    """Validate and return points as a float64 (N, 3) array.

    Accepts anything array-like. Rejects empty clouds, wrong widths, and
    non-finite coordinates, mirroring sklearn-style input checking.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"point cloud must have shape (N, 3), got {pts.shape}")
    if pts.shape[0] < min_points:
        raise ValueError(f"point cloud needs at least {min_points} points, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite coordinates")
    return pts


@dataclass
class PatchSet:
    """KNN neighborhoods around serialized key points, in key-relative coords."""

    key_points: np.ndarray         # (m, 3), already in serialization order
    patches: np.ndarray            # (m, k, 3), neighbor minus key
    serialization_order: np.ndarray  # permutation of [0, m) that produced the order

    @property
    def m(self) -> int:
        return self.key_points.shape[0]

    @property
    def k(self) -> int:
        return self.patches.shape[1]


def normalize_unit(points) -> tuple[np.ndarray, np.ndarray, float]:
    """Center on the centroid and scale the farthest point to unit norm.

    Returns (normalized, centroid, scale) so callers can invert the
    transform. A degenerate all-coincident cloud gets scale 1.
    """
    pts = check_point_cloud(points)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scale = float(np.max(np.linalg.norm(centered, axis=1)))
    if scale == 0.0:
        scale = 1.0
    return centered / scale, centroid, scale


def farthest_point_sample(points, m: int, seed: int) -> np.ndarray:
    """Greedy max-min subset selection; returns m indices.

    The first pick is uniform under the seeded RNG; every later pick
    maximizes distance to the selected set, ties broken by lowest index.
    """
    pts = check_point_cloud(points)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} points from a cloud of {n}")
    first = int(np.random.default_rng(seed).integers(n))
    return _accel.fps_greedy(pts, m, first)


def knn(points, query, k: int) -> np.ndarray:
    """Indices of the k nearest points, ascending distance, ties by index."""
    pts = check_point_cloud(points)
    if not 1 <= k <= pts.shape[0]:
        raise ValueError(f"k={k} out of range for a cloud of {pts.shape[0]} points")
    q = np.asarray(query, dtype=np.float64).reshape(3)
    d2 = np.sum((pts - q) ** 2, axis=1)
    return np.argsort(d2, kind="stable")[:k]


def build_patches(points, keys, k: int, serialization_order=None) -> PatchSet:
    """KNN patch around each key, stored as neighbor-minus-key offsets.

    Keys are expected in serialization order already; the permutation that
    produced it may be passed along for bookkeeping. All keys are resolved
    in one vectorized pass that agrees with knn() including tie order.
    """
    pts = check_point_cloud(points)
    keyarr = np.asarray(keys, dtype=np.float64).reshape(-1, 3)
    if not 1 <= k <= pts.shape[0]:
        raise ValueError(f"k={k} out of range for a cloud of {pts.shape[0]} points")
    d2 = np.sum((keyarr[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    rel = pts[idx] - keyarr[:, None, :]
    if serialization_order is None:
        serialization_order = np.arange(keyarr.shape[0], dtype=np.int64)
    return PatchSet(keyarr.copy(), rel, np.asarray(serialization_order, dtype=np.int64))
