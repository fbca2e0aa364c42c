"""Non-learnable partial-shape synthesizer: depth-map render and back-project.

A seeded random viewpoint looks at the origin; the unit-normalized cloud is
orthographically projected onto an R x R depth grid with a per-pixel
z-buffer (nearest point wins), then the valid pixels are lifted back to 3D.
The result is a cleaner, more-occluded partial of the input and never
contains geometry the input did not have.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import check_point_cloud, farthest_point_sample

AZIMUTH_RANGE = (0.0, 360.0)
ELEVATION_RANGE = (-20.0, 40.0)
DEFAULT_RADIUS = 2.5
DEFAULT_RESOLUTION = 64

# image plane spans 2.2 world units so the unit ball fits with margin
PLANE_EXTENT = 2.2


@dataclass(frozen=True)
class Viewpoint:
    """Camera pose on a sphere around the origin, y-up convention.

    azimuth 0 / elevation 0 places the camera on the +z axis looking along
    -z; azimuth rotates around +y, elevation lifts toward +y.
    """

    azimuth: float
    elevation: float
    radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if not AZIMUTH_RANGE[0] <= self.azimuth <= AZIMUTH_RANGE[1]:
            raise ValueError(f"azimuth {self.azimuth} outside {AZIMUTH_RANGE}")
        if not ELEVATION_RANGE[0] <= self.elevation <= ELEVATION_RANGE[1]:
            raise ValueError(f"elevation {self.elevation} outside {ELEVATION_RANGE}")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def camera_position(self) -> np.ndarray:
        az = np.deg2rad(self.azimuth)
        el = np.deg2rad(self.elevation)
        return self.radius * np.array(
            [np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)]
        )

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(right, up, forward) orthonormal camera frame."""
        cam = self.camera_position()
        fwd = -cam / np.linalg.norm(cam)
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return right, up, fwd


@dataclass
class DepthMap:
    """Square grid of view-axis distances plus validity mask."""

    resolution: int
    depth: np.ndarray          # (R, R), rows = up axis, cols = right axis
    valid: np.ndarray          # (R, R) bool; invalid pixels hold +inf
    viewpoint: Viewpoint
    pixel_scale: float         # world units per pixel

    def valid_count(self) -> int:
        return int(self.valid.sum())


def sample_viewpoint(rng: np.random.Generator, radius: float = DEFAULT_RADIUS) -> Viewpoint:
    """Uniform azimuth in [0, 360) and elevation in [-20, 40]."""
    return Viewpoint(
        azimuth=float(rng.uniform(*AZIMUTH_RANGE)),
        elevation=float(rng.uniform(*ELEVATION_RANGE)),
        radius=radius,
    )


def project_depth(points, view: Viewpoint, resolution: int = DEFAULT_RESOLUTION) -> DepthMap:
    """Orthographic z-buffered render of a unit-normalized cloud."""
    pts = check_point_cloud(points)
    right, up, fwd = view.basis()
    ps = PLANE_EXTENT / resolution
    u = np.floor(pts @ right / ps + resolution / 2.0).astype(np.int64)
    v = np.floor(pts @ up / ps + resolution / 2.0).astype(np.int64)
    u = np.clip(u, 0, resolution - 1)
    v = np.clip(v, 0, resolution - 1)
    z = pts @ fwd + view.radius  # distance along the view axis, always > 0

    depth = np.full((resolution, resolution), np.inf)
    np.minimum.at(depth, (v, u), z)
    valid = np.isfinite(depth)
    return DepthMap(resolution, depth, valid, view, ps)


def backproject(dmap: DepthMap) -> np.ndarray:
    """Lift every valid pixel back to world coordinates (pixel centers)."""
    if dmap.valid_count() == 0:
        raise ValueError("empty view: depth map has no valid pixels")
    right, up, fwd = dmap.viewpoint.basis()
    v, u = np.nonzero(dmap.valid)
    r = dmap.resolution
    x_img = (u + 0.5 - r / 2.0) * dmap.pixel_scale
    y_img = (v + 0.5 - r / 2.0) * dmap.pixel_scale
    along = dmap.depth[v, u] - dmap.viewpoint.radius
    return (
        x_img[:, None] * right[None, :]
        + y_img[:, None] * up[None, :]
        + along[:, None] * fwd[None, :]
    )


def resample_to(points: np.ndarray, target: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly `target` points: FPS when shrinking, pad with replacement when growing."""
    n = points.shape[0]
    if n == target:
        return points.copy()
    if n > target:
        idx = farthest_point_sample(points, target, seed=int(rng.integers(2**63)))
        return points[idx]
    extra = rng.integers(0, n, size=target - n)
    return np.concatenate([points, points[extra]], axis=0)


def synthesize_views(
    points,
    n_views: int,
    target: int,
    rng: np.random.Generator,
    resolution: int = DEFAULT_RESOLUTION,
) -> list[np.ndarray]:
    """Render/back-project the cloud from n random viewpoints (Syn).

    Outputs are plain arrays with exactly `target` points each; they carry
    no differentiation history and feed the model as constants.
    """
    if target < 1:
        raise ValueError("target point count must be >= 1")
    pts = check_point_cloud(points)
    out = []
    for _ in range(n_views):
        view = sample_viewpoint(rng)
        cloud = backproject(project_depth(pts, view, resolution))
        out.append(resample_to(cloud, target, rng))
    return out
