"""Point-set distances, evaluation metrics, and the two training losses.

Every distance uses the plain (non-squared) Euclidean norm, so the Chamfer
distance decomposes exactly as cd = precision + coverage. Reports carry the
conventional table scaling: the CD family x100, UCD x10000, UHD x100.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel, autodiff as ad
from .autodiff import Tensor
from .geometry import check_point_cloud

CD_SCALE = 100.0
UCD_SCALE = 10000.0
UHD_SCALE = 100.0


@dataclass
class LossWeights:
    """Mixing weights: alpha/beta inside the Chamfer term, gamma between losses."""

    alpha: float = 0.1
    beta: float = 0.9
    gamma: float = 15.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")


def _pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def directional_dist(a, b) -> float:
    """Mean over a of the distance to the nearest point of b."""
    a = check_point_cloud(a)
    b = check_point_cloud(b)
    return float(np.mean(np.min(_pairwise_distances(a, b), axis=1)))


def precision(pred, gt) -> float:
    return directional_dist(pred, gt)


def coverage(pred, gt) -> float:
    return directional_dist(gt, pred)


def cd(pred, gt) -> float:
    return precision(pred, gt) + coverage(pred, gt)


def ucd(partial, pred) -> float:
    return directional_dist(partial, pred)


def uhd(partial, pred) -> float:
    """Worst-case distance from a partial point to the prediction."""
    partial = check_point_cloud(partial)
    pred = check_point_cloud(pred)
    return float(np.max(np.min(_pairwise_distances(partial, pred), axis=1)))


@dataclass
class MetricReport:
    """One evaluated shape, scaled for table parity (see module docstring)."""

    name: str
    precision: float
    coverage: float
    cd: float
    ucd: float | None = None
    uhd: float | None = None
    scale_note: str = "P/C/CD x100, UCD x10000, UHD x100"

    def csv_line(self) -> str:
        opt = lambda v: "" if v is None else repr(v)
        return f"{self.name},{self.precision!r},{self.coverage!r},{self.cd!r},{opt(self.ucd)},{opt(self.uhd)}"


CSV_HEADER = "name,precision,coverage,cd,ucd,uhd"


def evaluate(pred, gt, partial=None, name: str = "") -> MetricReport:
    """Full metric set for one prediction; UCD/UHD only when a partial is given."""
    p = precision(pred, gt)
    c = coverage(pred, gt)
    return MetricReport(
        name=name,
        precision=p * CD_SCALE,
        coverage=c * CD_SCALE,
        cd=(p + c) * CD_SCALE,
        ucd=None if partial is None else ucd(partial, pred) * UCD_SCALE,
        uhd=None if partial is None else uhd(partial, pred) * UHD_SCALE,
    )


# ---------------------------------------------------------------------------
# training losses (differentiable)

def loss_com(partial: np.ndarray, pred: Tensor, weights: LossWeights) -> Tensor:
    """Weighted two-way Chamfer pull between the partial input and the prediction.

    alpha weighs prediction-to-partial (precision side), beta weighs
    partial-to-prediction (coverage side). Nearest-neighbor assignments are
    frozen during backward, the standard subgradient treatment of min; the
    gradient reaches only the prediction.
    """
    p = check_point_cloud(partial)
    if pred.ndim != 2 or pred.shape[1] != 3 or pred.shape[0] < 1:
        raise ValueError(f"prediction must be a non-empty (N, 3) tensor, got {pred.shape}")
    c = pred.data
    n_c, n_p = c.shape[0], p.shape[0]

    # nearest partial point per prediction and nearest prediction per partial point
    d_cp, j_star, d_pc, i_star = _accel.nearest_both(c, p)
    value = weights.alpha * d_cp.mean() + weights.beta * d_pc.mean()

    def backward(g):
        gc = np.zeros_like(c)
        # precision side: d/dC_i ||C_i - P_j*||
        diff = c - p[j_star]
        safe = np.where(d_cp > 0, d_cp, 1.0)[:, None]
        gc += (weights.alpha / n_c) * np.where(d_cp[:, None] > 0, diff / safe, 0.0)
        # coverage side: each partial point pulls its nearest prediction
        diff2 = c[i_star] - p
        safe2 = np.where(d_pc > 0, d_pc, 1.0)[:, None]
        contrib = (weights.beta / n_p) * np.where(d_pc[:, None] > 0, diff2 / safe2, 0.0)
        np.add.at(gc, i_star, contrib)
        return (float(g) * gc,)

    return ad.make_op(np.asarray(value), (pred,), backward)


def loss_con(view_preds: Sequence[Tensor], pred: Tensor) -> Tensor:
    """Mean squared pointwise disagreement between view predictions and pred.

    The generator emits ordered points, so index i of each view prediction
    corresponds to index i of pred; gradients flow into both sides.
    """
    if len(view_preds) == 0:
        raise ValueError("need at least one view prediction")
    for v in view_preds:
        if v.shape != pred.shape:
            raise ValueError(f"view prediction shape {v.shape} != prediction shape {pred.shape}")
    n_c = pred.shape[0]
    total = None
    for v in view_preds:
        d = ad.sub(v, pred)
        s = ad.tsum(ad.mul(d, d))
        total = s if total is None else ad.add(total, s)
    return ad.mul(total, 1.0 / (n_c * len(view_preds)))


def loss_total(
    partial: np.ndarray,
    pred: Tensor,
    view_preds: Sequence[Tensor],
    weights: LossWeights,
) -> tuple[Tensor, Tensor, Tensor]:
    """Combined objective: loss_com + gamma * loss_con. Returns (L, L_com, L_con)."""
    com = loss_com(partial, pred, weights)
    con = loss_con(view_preds, pred)
    return ad.add(com, ad.mul(con, weights.gamma)), com, con
