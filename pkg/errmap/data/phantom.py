"""
Synthetic phantoms and parametric mask degradation.

Phantoms are nested randomized ellipsoid shells (background plus C-1 tissue
classes) rendered into an image with per-class mean intensities, a smooth
bias field and Gaussian noise. Degraded masks stand in for the output of a
trained segmentation network of varying quality.
"""

from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage

from ..config.settings import (
    DEGRADE_BLOB_RADIUS,
    DEGRADE_DSC_SPAN,
    DEGRADE_FIELD_SIGMA,
    DEGRADE_MAX_BLOBS,
    DEGRADE_MAX_FLIP_PROB,
    DEGRADE_MAX_RADIUS,
    DESK_CLASSES,
    DESK_DIMS,
    MIN_CLASS_FRACTION,
    MIN_PHANTOM_EXTENT,
    PHANTOM_BIAS_AMPLITUDE,
    PHANTOM_MAX_RETRIES,
    PHANTOM_MEAN_SPACING_SIGMAS,
    PHANTOM_NOISE_SIGMA,
)
from ..evaluation.metrics import seg_quality


def _normalized_grid(dims: Sequence[int]) -> np.ndarray:
    axes = [np.linspace(-1.0, 1.0, n) for n in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def _nested_shells(rng: np.random.Generator, grid: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.zeros(grid.shape[1:], dtype=np.uint8)
    base_radii = rng.uniform(0.65, 0.9, size=3)
    center = rng.uniform(-0.1, 0.1, size=3)
    for c in range(1, num_classes):
        shrink = 1.0 - 0.55 * (c - 1) / max(num_classes - 2, 1)
        radii = base_radii * shrink * rng.uniform(0.9, 1.0, size=3)
        shell_center = center + rng.uniform(-0.05, 0.05, size=3)
        offsets = (grid - shell_center[:, None, None, None]) / radii[:, None, None, None]
        labels[(offsets * offsets).sum(axis=0) <= 1.0] = c
    return labels


def gen_phantom(
    seed: int,
    dims: Sequence[int] = DESK_DIMS,
    num_classes: int = DESK_CLASSES,
    noise_sigma: float = PHANTOM_NOISE_SIGMA,
    bias_amplitude: float = PHANTOM_BIAS_AMPLITUDE,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Generate a phantom image and its ground-truth labels.

    Args:
        seed: Seed; identical seeds give bit-identical phantoms
        dims: Volume extents, each at least 16
        num_classes: Number of classes C including background, at least 2
        noise_sigma: Standard deviation of the additive Gaussian noise
        bias_amplitude: Peak relative strength of the smooth bias field

    Returns:
        tuple: (image float64 [D, H, W], gt_labels uint8 [D, H, W])
    """
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3 or min(dims) < MIN_PHANTOM_EXTENT:
        raise ValueError(f"Phantom dims must be three extents >= {MIN_PHANTOM_EXTENT}, got {dims}")
    if num_classes < 2:
        raise ValueError(f"Phantom needs at least 2 classes, got {num_classes}")

    rng = np.random.default_rng(seed)
    grid = _normalized_grid(dims)
    for _ in range(PHANTOM_MAX_RETRIES):
        labels = _nested_shells(rng, grid, num_classes)
        fractions = np.bincount(labels.reshape(-1), minlength=num_classes) / labels.size
        if np.all(fractions[1:] >= MIN_CLASS_FRACTION):
            break
    else:
        raise RuntimeError(
            f"Could not place {num_classes - 1} tissue classes of >= {MIN_CLASS_FRACTION:.0%} each in {dims}"
        )

    spacing = PHANTOM_MEAN_SPACING_SIGMAS * noise_sigma
    means = np.zeros(num_classes)
    means[1:] = spacing * (1 + rng.permutation(num_classes - 1))
    field = ndimage.gaussian_filter(rng.standard_normal(dims), sigma=max(dims) / 4.0, mode="nearest")
    field /= max(np.abs(field).max(), 1e-12)
    image = means[labels] * (1.0 + bias_amplitude * field) + rng.normal(0.0, noise_sigma, size=dims)
    return image, labels


def _ball(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    zz, yy, xx = np.meshgrid(r, r, r, indexing="ij")
    return zz * zz + yy * yy + xx * xx <= radius * radius


def _morph_classes(rng: np.random.Generator, mask: np.ndarray, num_classes: int, radius: int) -> None:
    structure = _ball(radius)
    chosen = rng.permutation(np.arange(1, num_classes))[: int(rng.integers(1, num_classes))]
    for c in chosen:
        region = mask == c
        if not region.any() or region.all():
            continue
        if rng.random() < 0.5:
            grown = ndimage.binary_dilation(region, structure)
            mask[grown & ~region] = c
        else:
            removed = region & ~ndimage.binary_erosion(region, structure)
            # Eroded voxels take the label of the nearest voxel outside the class.
            _, nearest = ndimage.distance_transform_edt(region, return_indices=True)
            mask[removed] = mask[tuple(nearest)][removed]


def _flip_boundary_band(rng: np.random.Generator, mask: np.ndarray, probability: float) -> None:
    upper = ndimage.grey_dilation(mask, size=(3, 3, 3))
    lower = ndimage.grey_erosion(mask, size=(3, 3, 3))
    band = upper != lower
    candidate = np.where(rng.random(mask.shape) < 0.5, upper, lower)
    candidate = np.where(candidate == mask, np.where(candidate == upper, lower, upper), candidate)
    flips = band & (rng.random(mask.shape) < probability)
    mask[flips] = candidate[flips]


def _blobs(rng: np.random.Generator, mask: np.ndarray, num_classes: int, count: int) -> None:
    grid = np.indices(mask.shape)
    low, high = DEGRADE_BLOB_RADIUS
    for _ in range(count):
        center = np.array([rng.integers(0, n) for n in mask.shape])
        radius = rng.uniform(low, high)
        offsets = grid - center[:, None, None, None]
        blob = (offsets * offsets).sum(axis=0) <= radius * radius
        if rng.random() < 0.5:
            mask[blob] = 0
        else:
            mask[blob] = int(rng.integers(1, num_classes))


def target_seg_dsc(severity: float) -> float:
    """Seg.DSC that ``degrade_mask`` drives a mask of this severity down to."""
    return 1.0 - DEGRADE_DSC_SPAN * severity


def _proposal(rng: np.random.Generator, gt_labels: np.ndarray, severity: float, num_classes: int) -> np.ndarray:
    proposal = np.array(gt_labels, copy=True)
    _morph_classes(rng, proposal, num_classes, max(1, int(round(severity * DEGRADE_MAX_RADIUS))))
    _flip_boundary_band(rng, proposal, severity * DEGRADE_MAX_FLIP_PROB)
    _blobs(rng, proposal, num_classes, int(round(severity * DEGRADE_MAX_BLOBS)))
    return proposal


def degrade_mask(gt_labels: np.ndarray, severity: float, seed: int, num_classes: Optional[int] = None) -> np.ndarray:
    """
    Degrade a ground-truth label volume into a plausible generated mask.

    A proposal composes (a) erosion or dilation of random foreground classes
    with a ball whose radius scales with severity, (b) label flips in the
    boundary band with a probability scaling with severity and (c) random blob
    insertions and deletions whose count scales with severity. The proposal's
    changes are then applied in the order of a smooth random field, so errors
    arrive as spatially coherent patches, until Seg.DSC first drops to
    ``target_seg_dsc(severity)``. Voxels the proposal left intact follow, each
    relabelled to the next class, so every target is reachable.

    Every wrongly labelled voxel lowers the Dice of both classes it touches,
    so Seg.DSC falls monotonically along that order and the result sits at
    most one voxel's worth below the target. Severity 0 returns the ground
    truth unchanged.

    Args:
        gt_labels: Ground-truth labels [D, H, W]
        severity: Degradation strength in [0, 1]
        seed: Seed for the degradation draws
        num_classes: Class count C (defaults to max label + 1)

    Returns:
        np.ndarray: Degraded labels, same dtype and extents as gt_labels
    """
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must lie in [0, 1], got {severity}")
    gt_labels = np.asarray(gt_labels)
    if severity == 0:
        return gt_labels.copy()
    num_classes = num_classes or int(gt_labels.max()) + 1
    rng = np.random.default_rng(seed)

    proposal = _proposal(rng, gt_labels, severity, num_classes)
    field = ndimage.gaussian_filter(rng.standard_normal(gt_labels.shape), sigma=DEGRADE_FIELD_SIGMA)
    changed = (proposal != gt_labels).ravel()
    shifted = ((gt_labels.astype(np.int64) + 1) % num_classes).astype(gt_labels.dtype)
    replacement = np.where(changed, proposal.ravel(), shifted.ravel())
    # proposal voxels first, each group by descending field
    order = np.lexsort((-field.ravel(), ~changed))
    flat_gt = gt_labels.ravel()
    target = target_seg_dsc(severity)

    def applied(count: int) -> np.ndarray:
        mask = flat_gt.copy()
        mask[order[:count]] = replacement[order[:count]]
        return mask.reshape(gt_labels.shape)

    lo, hi = 0, order.size
    while lo < hi:
        mid = (lo + hi) // 2
        if seg_quality(applied(mid), gt_labels, num_classes)["seg_dsc"] <= target:
            hi = mid
        else:
            lo = mid + 1
    return applied(lo)


def calibrate_severity(
    severities: Iterable[float],
    seeds: Iterable[int],
    dims: Sequence[int] = DESK_DIMS,
    num_classes: int = DESK_CLASSES,
) -> pd.DataFrame:
    """
    Measure the severity -> Seg.DSC mapping of the current generator.

    Returns:
        pd.DataFrame: One row per severity with the target and the measured
        mean, std, min and max Seg.DSC
    """
    seeds = list(seeds)
    rows = []
    for severity in severities:
        scores = []
        for seed in seeds:
            _, gt = gen_phantom(seed, dims, num_classes)
            mask = degrade_mask(gt, severity, seed + 1, num_classes)
            scores.append(seg_quality(mask, gt, num_classes)["seg_dsc"])
        scores = np.asarray(scores)
        rows.append(
            {
                "severity": float(severity),
                "n": len(scores),
                "seg_dsc_target": target_seg_dsc(severity),
                "seg_dsc_mean": scores.mean(),
                "seg_dsc_std": scores.std(),
                "seg_dsc_min": scores.min(),
                "seg_dsc_max": scores.max(),
            }
        )
    return pd.DataFrame(rows)
