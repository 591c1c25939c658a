"""
Enhanced class-boundary targets from generated masks.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage


@dataclass
class BoundaryTarget:
    """Enhanced boundary volume; every value is 0 or in (0.5, 1]."""

    values: np.ndarray
    source_mask_id: Optional[str] = None


def _check_one_hot(mask_onehot: np.ndarray) -> None:
    if mask_onehot.ndim != 4:
        raise ValueError(f"sobel3d expects [C, D, H, W], got shape {mask_onehot.shape}")
    binary = np.isin(mask_onehot, (0, 1)).all()
    if not binary or not np.all(mask_onehot.sum(axis=0) == 1):
        raise ValueError("sobel3d expects an exactly one-hot mask")


def sobel3d(mask_onehot: np.ndarray) -> np.ndarray:
    """
    3D Sobel gradient magnitude of a one-hot mask.

    Per channel the derivative (-1, 0, 1) runs along each axis with (1, 2, 1)
    smoothing across the other two; borders replicate the edge voxel. The
    result is the voxelwise maximum of the per-channel magnitudes.

    Args:
        mask_onehot: One-hot mask [C, D, H, W]

    Returns:
        np.ndarray: Gradient magnitude S [D, H, W]
    """
    _check_one_hot(mask_onehot)
    magnitude = np.zeros(mask_onehot.shape[1:])
    for channel in mask_onehot.astype(np.float64):
        squared = np.zeros_like(magnitude)
        for axis in range(3):
            derivative = ndimage.sobel(channel, axis=axis, mode="nearest")
            squared += derivative * derivative
        np.maximum(magnitude, np.sqrt(squared), out=magnitude)
    return magnitude


def enhance_boundary(s: np.ndarray, source_mask_id: Optional[str] = None) -> BoundaryTarget:
    """
    Rescale Sobel magnitudes so every positive response lies in (0.5, 1].

    b = (s + max s) / (2 max s) where s > 0, else 0. An all-zero S gives an
    all-zero target.
    """
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("enhance_boundary expects non-negative gradient magnitudes")
    peak = s.max() if s.size else 0.0
    if peak == 0:
        return BoundaryTarget(np.zeros_like(s), source_mask_id)
    values = np.where(s > 0, (s + peak) / (2.0 * peak), 0.0)
    return BoundaryTarget(values, source_mask_id)
