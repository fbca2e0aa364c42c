"""Self-supervised training loop: complete the input, complete its synthetic
views, and tie everything together with the combined loss.

One training step runs the model on the partial cloud, synthesizes n fresh
random views of it (plain arrays, so the synthesizer never receives
gradients), runs the model on each view, and takes one adaptive-moment
update on the combined objective. Fresh viewpoints every step keep the
incompleteness diverse.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _accel, autodiff as ad
from .autodiff import Tensor, load_checkpoint, save_checkpoint
from .encoder import EncoderConfig, EncoderParams, encode, encode_batch, init_encoder_params
from .generator import GeneratorConfig, GeneratorParams, generate, generate_batch, init_generator_params
from .geometry import check_point_cloud, normalize_unit
from .metrics import LossWeights, loss_total
from .viewsynth import synthesize_views

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GRAD_CLIP_NORM = 10.0
CHECKPOINT_EVERY = 100
LOSS_CSV_HEADER = "step,L,L_com,L_con"


@dataclass(frozen=True)
class TrainConfig:
    """Flat hyperparameter set; the config file carries exactly these keys."""

    n_views: int = 8
    alpha: float = 0.1
    beta: float = 0.9
    gamma: float = 15.0
    steps: int = 500
    learning_rate: float = 1e-3
    seed: int = 0
    m: int = 64                 # key points per cloud
    k: int = 16                 # neighbors per patch
    d_model: int = 128
    d_state: int = 16
    n_output_points: int = 512
    depth_resolution: int = 64
    view_target: int = 800      # points per synthesized view

    def __post_init__(self):
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            n_keypoints=self.m, n_neighbors=self.k,
            d_model=self.d_model, d_state=self.d_state,
        )

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(n_points=self.n_output_points)

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)!r}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        """Build from string key/value pairs, rejecting unknown keys."""
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ValueError(f"unknown config key: {key!r}")
            conv = float if known[key] == "float" else int
            kwargs[key] = conv(raw)
        return cls(**kwargs)


@dataclass
class ModelParams:
    """Everything learnable: the encoder stack plus the generator head."""

    encoder: EncoderParams
    generator: GeneratorParams

    def named_tensors(self):
        yield from self.encoder.named_tensors()
        yield from self.generator.named_tensors()


def init_model(cfg: TrainConfig, rng: np.random.Generator | None = None) -> ModelParams:
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0)))
    return ModelParams(
        encoder=init_encoder_params(cfg.encoder_config(), rng),
        generator=init_generator_params(cfg.generator_config(), rng),
    )


@dataclass
class TrainState:
    params: ModelParams
    config: TrainConfig
    m1: dict[str, np.ndarray]
    m2: dict[str, np.ndarray]
    step: int = 0
    loss_history: list[tuple[int, float, float, float]] = field(default_factory=list)


def init_train_state(cfg: TrainConfig, params: ModelParams | None = None) -> TrainState:
    params = params if params is not None else init_model(cfg)
    m1 = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}
    m2 = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}
    return TrainState(params=params, config=cfg, m1=m1, m2=m2)


# ---------------------------------------------------------------------------
# optimization

def clip_gradients(params: ModelParams, max_norm: float = GRAD_CLIP_NORM) -> float:
    """Scale every gradient down if the global norm exceeds max_norm."""
    total = 0.0
    for _, t in params.named_tensors():
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for _, t in params.named_tensors():
            if t.grad is not None:
                t.grad *= factor
    return norm


def adam_step(state: TrainState, lr: float) -> None:
    """One bias-corrected adaptive-moment update; a pure function of
    (params, grads, moments, lr) given the step counter."""
    t = state.step + 1
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for name, p in state.params.named_tensors():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        _accel.adam_update(
            p.data.reshape(-1), g.reshape(-1),
            state.m1[name].reshape(-1), state.m2[name].reshape(-1),
            ADAM_BETA1, ADAM_BETA2, lr, c1, c2, ADAM_EPS,
        )


def _step_rng(cfg: TrainConfig, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((cfg.seed, 1, step)))


def forward_model(points, params: ModelParams, seed: int) -> Tensor:
    """The learnable map F: partial cloud -> predicted cloud tensor."""
    return generate(encode(points, params.encoder, seed), params.generator)


def forward_model_batch(clouds, params: ModelParams, seeds) -> list[Tensor]:
    """Run several clouds through one graph; returns per-cloud (n_points, 3)."""
    n_pts = params.generator.config.n_points
    feats = encode_batch(clouds, params.encoder, seeds)
    flat = generate_batch(feats, params.generator)
    return [
        ad.reshape(ad.narrow(flat, 0, i, i + 1), (n_pts, 3)) for i in range(len(clouds))
    ]


def train_step(state: TrainState, partial: np.ndarray) -> tuple[float, float, float]:
    """One self-supervised update on a single (normalized) partial cloud."""
    cfg = state.config
    rng = _step_rng(cfg, state.step)
    ad.reset_graph()

    views = synthesize_views(
        partial, cfg.n_views, cfg.view_target, rng, resolution=cfg.depth_resolution
    )
    # the main branch uses the same key-point seed as inference so its input
    # representation stays stable across steps; views get fresh seeds
    seeds = [cfg.seed] + [int(rng.integers(2**63)) for _ in views]
    pred, *view_preds = forward_model_batch([partial] + views, state.params, seeds)
    total, com, con = loss_total(partial, pred, view_preds, cfg.weights())
    values = (total.item(), com.item(), con.item())
    if not all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite loss at step {state.step}: {values}")

    ad.backward(total)
    clip_gradients(state.params)
    adam_step(state, cfg.learning_rate)
    for _, p in state.params.named_tensors():
        p.zero_grad()
    ad.reset_graph()

    state.step += 1
    state.loss_history.append((state.step, *values))
    return values


def train(dataset, cfg: TrainConfig, checkpoint_path=None) -> TrainState:
    """Shuffle the dataset each epoch and run cfg.steps training steps.

    Every cloud is unit-normalized once up front. When a checkpoint path is
    given, parameters are saved every 100 steps and at the end.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    clouds = [normalize_unit(check_point_cloud(c))[0] for c in dataset]
    state = init_train_state(cfg)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2)))
    while state.step < cfg.steps:
        for i in shuffle_rng.permutation(len(clouds)):
            if state.step >= cfg.steps:
                break
            train_step(state, clouds[i])
            if checkpoint_path is not None and state.step % CHECKPOINT_EVERY == 0:
                save_state(state, checkpoint_path)
    if checkpoint_path is not None:
        save_state(state, checkpoint_path)
    return state


def complete(points, state: TrainState) -> np.ndarray:
    """Inference: normalize, encode, generate, and map back to the input frame."""
    cfg = state.config
    pts = check_point_cloud(points, min_points=cfg.k)
    normalized, centroid, scale = normalize_unit(pts)
    ad.reset_graph()
    pred = forward_model(normalized, state.params, seed=cfg.seed)
    ad.reset_graph()
    return pred.data * scale + centroid


# ---------------------------------------------------------------------------
# persistence

def save_state(state: TrainState, path) -> None:
    """Binary parameter checkpoint plus a text sidecar (step, config, hash)."""
    path = Path(path)
    save_checkpoint(path, state.params.named_tensors())
    sidecar = [f"step = {state.step}", f"config_sha256 = {state.config.sha256()}", ""]
    sidecar.append(state.config.to_text())
    path.with_suffix(path.suffix + ".meta").write_text("\n".join(sidecar))


def load_state(path) -> TrainState:
    """Rebuild a TrainState from a checkpoint and its sidecar."""
    path = Path(path)
    meta = path.with_suffix(path.suffix + ".meta").read_text()
    step = 0
    config_lines = {}
    for line in meta.splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "step":
            step = int(value)
        elif key != "config_sha256":
            config_lines[key] = value
    cfg = TrainConfig.from_mapping(config_lines)
    state = init_train_state(cfg)
    state.step = step
    stored = load_checkpoint(path)
    for name, t in state.params.named_tensors():
        if name not in stored:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        if stored[name].shape != t.data.shape:
            raise ValueError(
                f"checkpoint parameter {name!r} has shape {stored[name].shape}, "
                f"expected {t.data.shape}"
            )
        t.data[...] = stored[name]
    return state


def write_loss_history(state: TrainState, path) -> None:
    lines = [LOSS_CSV_HEADER]
    lines += [f"{s},{l!r},{com!r},{con!r}" for s, l, com, con in state.loss_history]
    Path(path).write_text("\n".join(lines) + "\n")
