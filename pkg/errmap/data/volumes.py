"""
Aligned volume cases and the per-voxel transforms applied to them.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..config.settings import AXIS_INDEX
from .boundary import enhance_boundary, sobel3d


@dataclass
class GeneratedMask:
    """A degraded label volume with the targets derived from it."""

    labels: np.ndarray
    severity: float
    seed: Sequence[int]
    error_map: np.ndarray
    boundary: np.ndarray
    seg_dsc: float = float("nan")
    seg_acc: float = float("nan")


@dataclass
class VolumeCase:
    """One sample: image, ground truth and the generated masks, all aligned."""

    case_id: str
    image: np.ndarray
    gt_labels: np.ndarray
    num_classes: int
    masks: List[GeneratedMask] = field(default_factory=list)

    def __post_init__(self):
        shapes = {self.image.shape, self.gt_labels.shape}
        for mask in self.masks:
            shapes.update({mask.labels.shape, mask.error_map.shape, mask.boundary.shape})
        if len(shapes) != 1:
            raise ValueError(f"Case {self.case_id}: volumes do not share extents {sorted(shapes)}")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.image.shape)

    def select_mask(self, index: int) -> "VolumeCase":
        """The same case restricted to one generated mask."""
        if not 0 <= index < len(self.masks):
            raise IndexError(f"Case {self.case_id} has {len(self.masks)} masks, asked for {index}")
        return replace(self, masks=[self.masks[index]])

    def map_volumes(
        self,
        image_fn: Callable[[np.ndarray], np.ndarray],
        label_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        error_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ) -> "VolumeCase":
        """Apply spatial transforms to every aligned volume of the case."""
        label_fn = label_fn or image_fn
        error_fn = error_fn or label_fn
        masks = [
            replace(
                mask,
                labels=label_fn(mask.labels),
                error_map=error_fn(mask.error_map),
                boundary=image_fn(mask.boundary),
            )
            for mask in self.masks
        ]
        return replace(self, image=image_fn(self.image), gt_labels=label_fn(self.gt_labels), masks=masks)


def make_error_map(mask: np.ndarray, gt_labels: np.ndarray) -> np.ndarray:
    """Binary error map: 1 where the mask agrees with ground truth, 0 where it errs."""
    if mask.shape != gt_labels.shape:
        raise ValueError(f"make_error_map: extent mismatch {mask.shape} vs {gt_labels.shape}")
    return (mask == gt_labels).astype(np.uint8)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """[D, H, W] integer labels -> [C, D, H, W] float one-hot encoding."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(
            f"one_hot: labels span [{labels.min()}, {labels.max()}], outside 0..{num_classes - 1}"
        )
    classes = np.arange(num_classes).reshape((num_classes,) + (1,) * labels.ndim)
    return (labels[None] == classes).astype(np.float64)


def derive_targets(mask_labels: np.ndarray, gt_labels: np.ndarray, num_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Real error map and enhanced boundary target of one generated mask."""
    error_map = make_error_map(mask_labels, gt_labels)
    boundary = enhance_boundary(sobel3d(one_hot(mask_labels, num_classes))).values
    return error_map, boundary


def preprocess(image: np.ndarray) -> np.ndarray:
    """Z-score the whole volume, then rescale it affinely to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    std = image.std()
    if std == 0 or image.max() == image.min():
        return np.full(image.shape, 0.5)
    z = (image - image.mean()) / std
    lo, hi = z.min(), z.max()
    if hi == lo:
        return np.full(image.shape, 0.5)
    return (z - lo) / (hi - lo)


def _pad_volume(volume: np.ndarray, target: Sequence[int], fill) -> np.ndarray:
    padding = tuple((0, max(t - n, 0)) for n, t in zip(volume.shape, target))
    if not any(after for _, after in padding):
        return volume
    return np.pad(volume, padding, constant_values=fill)


def random_crop(case: VolumeCase, crop_dims: Sequence[int], seed) -> VolumeCase:
    """
    Crop every aligned volume at the same random offset.

    Volumes smaller than the crop are zero-padded first; the error map is
    padded with 1 because zero-padded mask and ground truth agree there.
    """
    crop_dims = tuple(int(n) for n in crop_dims)
    if len(crop_dims) != 3 or min(crop_dims) < 1:
        raise ValueError(f"crop_dims must be three positive extents, got {crop_dims}")
    padded_dims = tuple(max(n, c) for n, c in zip(case.dims, crop_dims))
    rng = np.random.default_rng(seed)
    offsets = tuple(int(rng.integers(0, n - c + 1)) for n, c in zip(padded_dims, crop_dims))
    window = tuple(slice(o, o + c) for o, c in zip(offsets, crop_dims))

    def crop_fill(fill):
        return lambda v: np.ascontiguousarray(_pad_volume(v, padded_dims, fill)[window])

    return case.map_volumes(crop_fill(0), crop_fill(0), crop_fill(1))


def mirror_flip(case: VolumeCase, axes: Sequence[str], seed) -> VolumeCase:
    """Flip every aligned volume along each listed axis with probability 0.5."""
    unknown = [a for a in axes if a not in AXIS_INDEX]
    if unknown:
        raise ValueError(f"mirror_flip: unknown axes {unknown}; expected a subset of {sorted(AXIS_INDEX)}")
    rng = np.random.default_rng(seed)
    flip = tuple(AXIS_INDEX[a] for a in axes if rng.random() < 0.5)
    return flip_axes(case, flip)


def flip_axes(case: VolumeCase, axes: Sequence[int]) -> VolumeCase:
    """Deterministic flip of every aligned volume along the given array axes."""
    if not axes:
        return case
    return case.map_volumes(lambda v: np.ascontiguousarray(np.flip(v, axis=tuple(axes))))
