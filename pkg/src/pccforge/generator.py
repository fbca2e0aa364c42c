"""Decode the global feature into a fixed-size predicted point cloud."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class GeneratorConfig:
    feature_dim: int = 512
    hidden: int = 1024
    n_points: int = 512    # paper-parity runs use 8192


@dataclass
class GeneratorParams:
    config: GeneratorConfig
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor
    fc3_w: Tensor
    fc3_b: Tensor

    def named_tensors(self):
        yield "gen.fc1.w", self.fc1_w
        yield "gen.fc1.b", self.fc1_b
        yield "gen.fc2.w", self.fc2_w
        yield "gen.fc2.b", self.fc2_b
        yield "gen.fc3.w", self.fc3_w
        yield "gen.fc3.b", self.fc3_b


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def init_generator_params(cfg: GeneratorConfig, rng: np.random.Generator) -> GeneratorParams:
    params = GeneratorParams(
        config=cfg,
        fc1_w=_uniform(rng, cfg.feature_dim, (cfg.feature_dim, cfg.hidden)),
        fc1_b=_uniform(rng, cfg.feature_dim, cfg.hidden),
        fc2_w=_uniform(rng, cfg.hidden, (cfg.hidden, cfg.hidden)),
        fc2_b=_uniform(rng, cfg.hidden, cfg.hidden),
        fc3_w=_uniform(rng, cfg.hidden, (cfg.hidden, cfg.n_points * 3)),
        fc3_b=_uniform(rng, cfg.hidden, cfg.n_points * 3),
    )
    # folding-style start: the output bias is a small sphere template, so
    # the initial prediction is an evenly spread shell instead of an
    # arbitrary blob. Chamfer assignments then distribute immediately,
    # which converges much faster than waiting for points to peel off a
    # random cluster.
    params.fc3_w.data *= 0.1
    idx = np.arange(cfg.n_points)
    polar = np.arccos(1.0 - 2.0 * (idx + 0.5) / cfg.n_points)
    azim = np.pi * (1.0 + np.sqrt(5.0)) * idx
    template = 0.4 * np.stack(
        [np.sin(polar) * np.cos(azim), np.sin(polar) * np.sin(azim), np.cos(polar)], axis=1
    )
    params.fc3_b.data[:] = template.reshape(-1)
    return params


def generate_batch(g: Tensor, params: GeneratorParams) -> Tensor:
    """Feature rows (n, feature_dim) -> flat predictions (n, n_points * 3)."""
    cfg = params.config
    if g.ndim != 2 or g.shape[1] != cfg.feature_dim:
        raise ValueError(f"expected (n, {cfg.feature_dim}) features, got shape {g.shape}")
    h = ad.relu(ad.linear(g, params.fc1_w, params.fc1_b))
    h = ad.relu(ad.linear(h, params.fc2_w, params.fc2_b))
    return ad.linear(h, params.fc3_w, params.fc3_b)


def generate(g: Tensor, params: GeneratorParams) -> Tensor:
    """Global feature -> (n_points, 3) prediction, deterministic and ordered.

    The fixed output ordering is what lets the pointwise consistency loss
    compare predictions from different views index by index.
    """
    cfg = params.config
    if g.size != cfg.feature_dim:
        raise ValueError(f"expected a {cfg.feature_dim}-d global feature, got shape {g.shape}")
    out = generate_batch(ad.reshape(g, (1, cfg.feature_dim)), params)
    return ad.reshape(out, (cfg.n_points, 3))
