"""
Training losses: generalized Dice on the error map, boundary MSE, the CEU
error-rate regression and their weighted total.
"""

from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from ..config.settings import GDL_EPS, LOSS_ALPHA, LOSS_BETA, LOSS_GAMMA
from .autodiff import (
    Operand,
    ShapeMismatchError,
    Tensor,
    add,
    as_tensor,
    div,
    mean,
    mul,
    reshape,
    scale,
    square,
    sub,
    sum_,
)

NORMALIZATION_TOLERANCE = 1e-6


@dataclass
class LossWeights:
    """Weights of the MEP, CBFT and CEU losses in the total."""

    alpha: float = LOSS_ALPHA
    beta: float = LOSS_BETA
    gamma: float = LOSS_GAMMA

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"Loss weight {name} must be non-negative, got {value}")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class LossBreakdown:
    mep: Tensor
    cbft: Optional[Tensor]
    ceu: Optional[Tensor]
    total: Tensor

    def values(self) -> Dict[str, float]:
        def value(t):
            return float("nan") if t is None else t.item()

        return {
            "loss_mep": value(self.mep),
            "loss_cbft": value(self.cbft),
            "loss_ceu": value(self.ceu),
            "loss_total": value(self.total),
        }


def error_onehot(error_map: np.ndarray) -> np.ndarray:
    """Binary error map -> [2, ...] target with channel 0 the error class."""
    error_map = np.asarray(error_map)
    if not np.isin(error_map, (0, 1)).all():
        raise ValueError("Error map must be binary (1 = correct, 0 = error)")
    return np.stack([error_map == 0, error_map == 1]).astype(np.float64)


def generalized_dice_loss(probs: Tensor, target: np.ndarray, eps: float = GDL_EPS) -> Tensor:
    """
    Two-class generalized Dice loss.

    loss = 1 - 2 * sum_c w_c sum_i p_i(c) r_i(c) / (sum_c w_c sum_i (p_i(c) + r_i(c)) + eps)

    with w_c = 1 / n_c^2 for the n_c target voxels of class c, zero for absent
    classes, normalized to sum 1. The normalization happens before eps joins the
    denominator, so eps is measured against a unit total weight rather than the
    raw 1 / n_c^2 scale.

    Args:
        probs: Predicted probabilities [2, ...], summing to 1 over channels
        target: One-hot reference [2, ...]

    Returns:
        Tensor: Scalar loss in [0, 1]
    """
    target = np.asarray(target, dtype=np.float64)
    if probs.shape != target.shape or probs.shape[0] != 2:
        raise ShapeMismatchError(f"generalized_dice_loss: prediction {probs.shape} vs target {target.shape}")
    if not (np.isin(target, (0.0, 1.0)).all() and np.all(target.sum(axis=0) == 1.0)):
        raise ValueError("generalized_dice_loss: target is not one-hot")
    drift = np.abs(probs.data.sum(axis=0) - 1.0).max()
    if drift > NORMALIZATION_TOLERANCE:
        raise ValueError(f"generalized_dice_loss: probabilities off normalization by {drift:.3g}")

    flat_target = target.reshape(2, -1)
    counts = flat_target.sum(axis=1)
    weights = np.zeros(2)
    present = counts > 0
    weights[present] = 1.0 / counts[present] ** 2
    weights /= weights.sum()

    p = reshape(probs, (2, -1))
    overlap = sum_(mul(p, Tensor(weights[:, None] * flat_target)))
    weighted_mass = sum_(mul(p, Tensor(np.broadcast_to(weights[:, None], flat_target.shape))))
    denominator = add(weighted_mass, float((weights * counts).sum()) + eps)
    return add(scale(div(overlap, denominator), -2.0), 1.0)


def boundary_mse(pred: Tensor, boundary: np.ndarray) -> Tensor:
    """Mean squared error between the predicted and the enhanced boundary."""
    boundary = np.asarray(boundary, dtype=np.float64)
    if pred.size != boundary.size:
        raise ShapeMismatchError(f"boundary_mse: prediction {pred.shape} vs target {boundary.shape}")
    target = Tensor(boundary.reshape(pred.shape))
    return mean(square(sub(pred, target)))


def real_error_rate(error_map: np.ndarray) -> float:
    """rER: fraction of voxels the error map marks as errors (value 0)."""
    error_map = np.asarray(error_map)
    if error_map.size == 0:
        raise ValueError("real_error_rate: empty error map")
    if not np.isin(error_map, (0, 1)).all():
        raise ValueError("real_error_rate: error map must be binary")
    return float(np.count_nonzero(error_map == 0) / error_map.size)


def ceu_loss(cer: Tensor, rer: float) -> Tensor:
    """(cER - rER)^2."""
    return square(sub(cer, float(rer)))


def total_loss(l1: Operand, l2: Optional[Operand], l3: Optional[Operand], weights: LossWeights) -> Tensor:
    """alpha*l1 + beta*l2 + gamma*l3, summed left to right; absent terms are skipped."""
    total = scale(as_tensor(l1), weights.alpha)
    if l2 is not None:
        total = add(total, scale(as_tensor(l2), weights.beta))
    if l3 is not None:
        total = add(total, scale(as_tensor(l3), weights.gamma))
    return total


def compute_losses(output, error_map: np.ndarray, boundary: np.ndarray, weights: LossWeights) -> LossBreakdown:
    """
    All losses of one forward pass.

    Args:
        output: ForwardOutput of the network
        error_map: Real error map of the crop
        boundary: Enhanced boundary target of the crop
        weights: Loss weights

    Returns:
        LossBreakdown: Individual terms (None where the variant lacks the head) and the total
    """
    l1 = generalized_dice_loss(output.error_prob, error_onehot(error_map))
    l2 = boundary_mse(output.boundary_pred, boundary) if output.boundary_pred is not None else None
    l3 = ceu_loss(output.cer, real_error_rate(error_map)) if output.cer is not None else None
    return LossBreakdown(l1, l2, l3, total_loss(l1, l2, l3, weights))


def batch_mean(totals) -> Tensor:
    """Average of per-crop total losses."""
    totals = list(totals)
    if not totals:
        raise ValueError("batch_mean needs at least one loss")
    if len(totals) == 1:
        return totals[0]
    acc = totals[0]
    for t in totals[1:]:
        acc = add(acc, t)
    return scale(acc, 1.0 / len(totals))
