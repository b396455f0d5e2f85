"""
Objective terms for co-training: dice, cross-entropy, uncertainty-weighted
route fusion, the cross-network contrastive loss, cross supervision and the
Gaussian warm-up of the unsupervised weight.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from ..ssm.routes import ROUTES_PER_SET
from ..tensor.core import (
    Tensor,
    argmax,
    as_tensor,
    exp,
    log,
    log_softmax,
    matmul,
    reduce,
    sigmoid,
    softmax,
    stop_gradient,
    transpose,
)

logger = logging.getLogger(__name__)

DICE_EPS = 1e-5
Scalar = Union[Tensor, float]


@dataclass
class ScheduleConfig:
    t_max: int = 2000
    peak_weight: float = 0.1

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError(f"t_max must be at least 1, got {self.t_max}")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "ScheduleConfig":
        return cls(t_max=config["trainer"]["t_max"], peak_weight=config["losses"]["peak_weight"])


@dataclass
class ContrastiveConfig:
    temperature: float = 0.5
    literal_denominator: bool = False  # negatives only in the denominator
    symmetric: bool = False
    reduction: str = "mean"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "ContrastiveConfig":
        section = config["losses"]
        return cls(temperature=section["temperature"], literal_denominator=section["literal_denominator"],
                   symmetric=section["symmetric"], reduction=section["reduction"])


def one_hot(indices: np.ndarray, num_classes: int) -> np.ndarray:
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= num_classes):
        raise ValueError(f"class indices must lie in [0, {num_classes})")
    return np.eye(num_classes)[indices.astype(np.int64)]


def dice_loss(probs: Tensor, target, eps: float = DICE_EPS) -> Tensor:
    """
    Soft dice loss averaged over the foreground classes.

    Args:
        probs: Class probabilities (..., H, W, K) with K >= 2
        target: One-hot target of the same shape
        eps: Smoothing term

    Returns:
        Scalar 1 - mean_k (2 Σ p g + eps) / (Σ p + Σ g + eps) over k >= 1
    """
    probs = as_tensor(probs)
    target = stop_gradient(target)
    if probs.shape != target.shape:
        raise ValueError(f"dice_loss: probs {probs.shape} and target {target.shape} differ")
    num_classes = probs.shape[-1]
    if num_classes < 2:
        raise ValueError("dice_loss needs at least two classes")
    axes = tuple(range(probs.ndim - 1))
    intersection = reduce("sum", probs * target, axes)
    denominator = reduce("sum", probs, axes) + reduce("sum", target, axes)
    dice = (2.0 * intersection + eps) / (denominator + eps)
    foreground = np.zeros(num_classes)
    foreground[1:] = 1.0 / (num_classes - 1)
    return 1.0 - reduce("sum", dice * foreground)


def ce_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean over pixels of -log softmax(logits)[target]."""
    logits = as_tensor(logits)
    target = np.asarray(target)
    if target.shape != logits.shape[:-1]:
        raise ValueError(f"ce_loss: target {target.shape} does not match logits {logits.shape}")
    picked = reduce("sum", log_softmax(logits, -1) * one_hot(target, logits.shape[-1]), -1)
    return -reduce("mean", picked)


def segmentation_loss(logits: Tensor, target: np.ndarray, eps: float = DICE_EPS) -> Tensor:
    """dice + cross-entropy of one network against an index map."""
    probs = softmax(logits, -1)
    return dice_loss(probs, one_hot(target, logits.shape[-1]), eps) + ce_loss(logits, target)


def uncertainty_weights(route_feats: Sequence[Tensor]) -> Tensor:
    """
    Logistic of the inter-route variance, one weight per spatial location.

    Args:
        route_feats: The K = 4 grid-aligned route features (..., H, W, C)

    Returns:
        Weights of shape (..., H, W, 1) in [0.5, 1)
    """
    if len(route_feats) != ROUTES_PER_SET:
        raise ValueError(f"uncertainty_weights needs {ROUTES_PER_SET} route features, got {len(route_feats)}")
    shape = route_feats[0].shape
    if any(z.shape != shape for z in route_feats):
        raise ValueError("route features differ in shape")
    k = float(len(route_feats))
    total = route_feats[0]
    for z in route_feats[1:]:
        total = total + z
    mean = total / k
    variance = (route_feats[0] - mean) ** 2
    for z in route_feats[1:]:
        variance = variance + (z - mean) ** 2
    variance = reduce("mean", variance / k, -1, keepdims=True)
    return sigmoid(variance)


def fuse_features(route_feats: Sequence[Tensor], weights: Optional[Tensor] = None) -> Tensor:
    """Sum of the route features, scaled per location by ``weights`` when given."""
    if not route_feats:
        raise ValueError("fuse_features needs at least one route feature")
    total = route_feats[0]
    for z in route_feats[1:]:
        if z.shape != total.shape:
            raise ValueError(f"route feature shapes differ: {z.shape} vs {total.shape}")
        total = total + z
    if weights is None:
        return total
    if weights.shape != total.shape[:-1] + (1,):
        raise ValueError(f"weights {weights.shape} do not match features {total.shape}")
    return total * weights


def _directed_contrastive(a: Tensor, b: Tensor, cfg: ContrastiveConfig) -> Tensor:
    batch = a.shape[0]
    similarity = matmul(a, transpose(b)) / cfg.temperature
    eye = np.eye(batch)
    keep = 1.0 - eye if cfg.literal_denominator else np.ones((batch, batch))
    # detached maxima over the kept entries keep the exponentials in range
    shift = Tensor(np.max(np.where(keep > 0, similarity.data, -np.inf), axis=-1, keepdims=True))
    denominator = reduce("sum", exp(similarity - shift) * keep, -1, keepdims=True)
    positive = reduce("sum", similarity * eye, -1, keepdims=True)
    per_sample = log(denominator) + shift - positive
    return reduce(cfg.reduction, per_sample)


def contrastive_loss(proj_a: Tensor, proj_b: Tensor, cfg: ContrastiveConfig = None) -> Tensor:
    """
    Cross-network contrastive loss between projected features.

    Row i of ``proj_a`` is pulled towards row i of ``proj_b`` and pushed away
    from the other rows, with dot-product similarity over temperature.

    Args:
        proj_a: Projections of network A, shape (batch, dim)
        proj_b: Projections of network B, shape (batch, dim)
        cfg: Temperature, denominator convention, symmetry and reduction

    Returns:
        Scalar loss
    """
    cfg = cfg or ContrastiveConfig()
    if proj_a.ndim != 2 or proj_a.shape != proj_b.shape:
        raise ValueError(f"contrastive_loss needs two (batch, dim) inputs, got {proj_a.shape} and {proj_b.shape}")
    if proj_a.shape[0] < 2:
        raise ValueError("contrastive_loss needs a batch of at least 2 (no negatives otherwise)")
    loss = _directed_contrastive(proj_a, proj_b, cfg)
    if cfg.symmetric:
        loss = 0.5 * (loss + _directed_contrastive(proj_b, proj_a, cfg))
    return loss


def pseudo_label(logits) -> np.ndarray:
    """Per-pixel argmax class map; ties go to the lowest index and no gradient flows."""
    return argmax(logits, axis=-1)


def supervised_loss(logits_a: Tensor, logits_b: Tensor, label: np.ndarray, eps: float = DICE_EPS) -> Tensor:
    if logits_a.shape != logits_b.shape:
        raise ValueError(f"logits shapes differ: {logits_a.shape} vs {logits_b.shape}")
    return 0.5 * segmentation_loss(logits_a, label, eps) + 0.5 * segmentation_loss(logits_b, label, eps)


def cross_supervision_loss(logits_a: Tensor, logits_b: Tensor, eps: float = DICE_EPS) -> Tensor:
    """Each network fitted to the other's gradient-stopped argmax map."""
    if logits_a.shape != logits_b.shape:
        raise ValueError(f"logits shapes differ: {logits_a.shape} vs {logits_b.shape}")
    return (0.5 * segmentation_loss(logits_a, pseudo_label(logits_b), eps)
            + 0.5 * segmentation_loss(logits_b, pseudo_label(logits_a), eps))


def lambda_schedule(t: float, cfg: ScheduleConfig) -> float:
    """
    Gaussian warm-up weight peak · exp(-5 (1 - t / t_max)²).
    """
    if not 0 <= t <= cfg.t_max:
        raise ValueError(f"iteration {t} outside [0, {cfg.t_max}]")
    return float(cfg.peak_weight * np.exp(-5.0 * (1.0 - t / cfg.t_max) ** 2))


def total_loss(sup: Scalar, unsup: Scalar, dfc: Scalar, t: float, cfg: ScheduleConfig) -> Tensor:
    return as_tensor(sup) + lambda_schedule(t, cfg) * as_tensor(unsup) + as_tensor(dfc)
