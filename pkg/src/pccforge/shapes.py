"""Procedural surface-sampled shapes standing in for scanned objects.

Every generator draws uniform samples on the surface (area-weighted across
faces/parts), so ground truth is exact and free. make_partial turns a full
shape into a view-occluded partial through the same render/back-project
machinery the trainer uses for augmentation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import check_point_cloud
from .viewsynth import Viewpoint, backproject, project_depth, resample_to

SHAPE_KINDS = ("sphere", "box", "cylinder", "composite")


@dataclass(frozen=True)
class ProceduralShape:
    kind: str
    sample_count: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}; choose from {SHAPE_KINDS}")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


def _sample_sphere(rng, n, radius=1.0, center=(0.0, 0.0, 0.0)):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius + np.asarray(center)


def _sample_box(rng, n, half=(0.8, 0.5, 0.6), center=(0.0, 0.0, 0.0)):
    hx, hy, hz = half
    # one entry per face pair: +x/-x, +y/-y, +z/-z
    areas = np.array([hy * hz, hx * hz, hx * hy], dtype=np.float64) * 4.0
    probs = np.repeat(areas / 2.0, 2)
    probs /= probs.sum()
    faces = rng.choice(6, size=n, p=probs)
    u = rng.uniform(-1.0, 1.0, (n, 2))
    pts = np.empty((n, 3))
    for f in range(6):
        mask = faces == f
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        others = [i for i in range(3) if i != axis]
        halves = (hx, hy, hz)
        pts[mask, axis] = sign * halves[axis]
        pts[mask, others[0]] = u[mask, 0] * halves[others[0]]
        pts[mask, others[1]] = u[mask, 1] * halves[others[1]]
    return pts + np.asarray(center)


def _sample_cylinder(rng, n, radius=0.5, height=1.6, center=(0.0, 0.0, 0.0)):
    lateral = 2.0 * np.pi * radius * height
    cap = np.pi * radius * radius
    probs = np.array([lateral, cap, cap])
    probs /= probs.sum()
    part = rng.choice(3, size=n, p=probs)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    pts = np.empty((n, 3))
    lat = part == 0
    pts[lat, 0] = radius * np.cos(theta[lat])
    pts[lat, 2] = radius * np.sin(theta[lat])
    pts[lat, 1] = rng.uniform(-height / 2.0, height / 2.0, int(lat.sum()))
    for which, y in ((1, height / 2.0), (2, -height / 2.0)):
        mask = part == which
        r = radius * np.sqrt(rng.uniform(0.0, 1.0, int(mask.sum())))
        pts[mask, 0] = r * np.cos(theta[mask])
        pts[mask, 2] = r * np.sin(theta[mask])
        pts[mask, 1] = y
    return pts + np.asarray(center)


def _sample_composite(rng, n, **_):
    # box body with a tangent sphere cap: disjoint surfaces, exact areas
    half = (0.6, 0.4, 0.5)
    radius = 0.35
    box_area = 8.0 * (half[0] * half[1] + half[0] * half[2] + half[1] * half[2])
    sphere_area = 4.0 * np.pi * radius * radius
    n_sphere = max(1, min(n - 1, round(n * sphere_area / (box_area + sphere_area))))
    top = _sample_sphere(rng, n_sphere, radius, center=(0.0, half[1] + radius, 0.0))
    body = _sample_box(rng, n - n_sphere, half)
    return np.concatenate([body, top], axis=0)


_SAMPLERS = {
    "sphere": _sample_sphere,
    "box": _sample_box,
    "cylinder": _sample_cylinder,
    "composite": _sample_composite,
}


def gen_shape(spec: ProceduralShape, seed: int) -> np.ndarray:
    """Uniform surface samples of the shape, deterministic per seed."""
    rng = np.random.default_rng(seed)
    return _SAMPLERS[spec.kind](rng, spec.sample_count, **spec.params)


def make_partial(points, view: Viewpoint, target: int, seed: int = 0) -> np.ndarray:
    """Fabricate a ground-truth-paired partial: render, back-project, resample.

    The input must be unit-normalized (the projector's contract); the output
    lives in the same frame, so distances to the full shape stay meaningful.
    """
    pts = check_point_cloud(points)
    cloud = backproject(project_depth(pts, view))
    return resample_to(cloud, target, np.random.default_rng(seed))
