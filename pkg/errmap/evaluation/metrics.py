"""
Error-map, segmentation-quality and correlation metrics.

Error maps encode correct voxels as 1 and misclassified voxels as 0. For the
error-map metrics the positive class is the error class (value 0).
"""

from typing import Dict, Sequence

import numpy as np
from scipy import stats

MISSING = float("nan")


def binarize_prediction(pred_prob: np.ndarray) -> np.ndarray:
    """Per-voxel argmax of a [2, ...] probability map as a 0/1 error map (ties -> error)."""
    pred_prob = np.asarray(pred_prob)
    if pred_prob.shape[0] != 2:
        raise ValueError(f"Expected a two-channel prediction, got shape {pred_prob.shape}")
    return np.argmax(pred_prob, axis=0).astype(np.uint8)


def confusion_counts(pred_map: np.ndarray, real_map: np.ndarray) -> Dict[str, int]:
    """TP/FP/FN/TN with the error voxels as positives."""
    pred_err = np.asarray(pred_map) == 0
    real_err = np.asarray(real_map) == 0
    return {
        "tp": int(np.count_nonzero(pred_err & real_err)),
        "fp": int(np.count_nonzero(pred_err & ~real_err)),
        "fn": int(np.count_nonzero(~pred_err & real_err)),
        "tn": int(np.count_nonzero(~pred_err & ~real_err)),
    }


def error_map_metrics(pred_prob: np.ndarray, real: np.ndarray) -> Dict[str, float]:
    """
    DSC, Acc, Prec and Recl between a predicted and the real error map.

    Args:
        pred_prob: Predicted probabilities [2, N...]; channel 0 is the error class
        real: Real binary error map [N...]

    Returns:
        Dict with keys dsc, acc, prec, recl. Prec/Recl are NaN when their
        denominator is empty; DSC is 1 when neither map has an error voxel.
    """
    pred_prob = np.asarray(pred_prob)
    real = np.asarray(real)
    if pred_prob.shape[1:] != real.shape:
        raise ValueError(f"Prediction {pred_prob.shape} does not match error map {real.shape}")
    if not np.isin(real, (0, 1)).all():
        raise ValueError("Real error map must be binary")
    counts = confusion_counts(binarize_prediction(pred_prob), real)
    tp, fp, fn, tn = counts["tp"], counts["fp"], counts["fn"], counts["tn"]
    dsc_den = 2 * tp + fp + fn
    return {
        "dsc": 2 * tp / dsc_den if dsc_den else 1.0,
        "acc": (tp + tn) / real.size,
        "prec": tp / (tp + fp) if tp + fp else MISSING,
        "recl": tp / (tp + fn) if tp + fn else MISSING,
    }


def predicted_accuracy(pred_error_map: np.ndarray) -> float:
    """pAcc: fraction of voxels the predicted error map marks as correct."""
    pred_error_map = np.asarray(pred_error_map)
    return float(np.count_nonzero(pred_error_map == 1) / pred_error_map.size)


def seg_quality(mask: np.ndarray, gt: np.ndarray, num_classes: int) -> Dict[str, float]:
    """
    Seg.DSC and Seg.Acc of a generated mask against ground truth.

    Seg.DSC is the unweighted mean of the per-class binary Dice over the
    foreground classes 1..C-1; classes absent from both volumes are skipped
    (1.0 when every foreground class is absent from both).
    """
    mask = np.asarray(mask)
    gt = np.asarray(gt)
    if mask.shape != gt.shape:
        raise ValueError(f"seg_quality: extent mismatch {mask.shape} vs {gt.shape}")
    scores = []
    for c in range(1, num_classes):
        in_mask = mask == c
        in_gt = gt == c
        total = np.count_nonzero(in_mask) + np.count_nonzero(in_gt)
        if total == 0:
            continue
        scores.append(2.0 * np.count_nonzero(in_mask & in_gt) / total)
    return {
        "seg_dsc": float(np.mean(scores)) if scores else 1.0,
        "seg_acc": float(np.count_nonzero(mask == gt) / gt.size),
    }


def _paired(xs: Sequence[float], ys: Sequence[float]):
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"Paired samples need equal 1-D lengths, got {x.shape} and {y.shape}")
    return x, y


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    x, y = _paired(xs, ys)
    if x.size < 2:
        raise ValueError(f"pearson needs at least 2 pairs, got {x.size}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("pearson needs finite values")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("pearson is undefined for zero-variance input")
    return float(stats.pearsonr(x, y)[0])


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation."""
    x, y = _paired(xs, ys)
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("spearman needs at least 2 pairs with non-zero variance")
    return float(stats.spearmanr(x, y)[0])


def mae(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Mean absolute error."""
    x, y = _paired(xs, ys)
    if x.size == 0:
        raise ValueError("mae needs at least one pair")
    return float(np.abs(x - y).mean())
