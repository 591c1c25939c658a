"""
On-disk organization of the desk dataset: case directories of RVOL volumes
plus a YAML manifest.

Layout::

    <root>/manifest.yaml
    <root>/cases/case_000/image.rvol, gt.rvol
    <root>/cases/case_000/mask_0.rvol, error_0.rvol, boundary_0.rvol, ...
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import yaml
from tqdm import tqdm

from ..config.settings import (
    DATA_DIR,
    DESK_CASE_COUNT,
    DESK_CLASSES,
    DESK_DIMS,
    DESK_MASKS_PER_CASE,
    HISTOGRAM_EDGES,
    MANIFEST_NAME,
    MASTER_SEED,
    NUM_FOLDS,
    SEVERITY_JITTER,
    SEVERITY_LEVELS,
)
from ..core.logger import OperationLogger
from ..evaluation.metrics import seg_quality
from .phantom import degrade_mask, gen_phantom
from .volume_io import VolumeFormatError, read_volume, write_volume
from .volumes import GeneratedMask, VolumeCase, derive_targets, preprocess

MANIFEST_VERSION = 1
_SEVERITY_STREAM = 1
_MASK_STREAM = 2


def case_seeds(master_seed: int, index: int, masks_per_case: int):
    """Phantom seed, per-mask degradation seeds and per-mask severities of one case."""
    rng = np.random.default_rng([master_seed, index, _SEVERITY_STREAM])
    severities = []
    for k in range(masks_per_case):
        level = SEVERITY_LEVELS[k % len(SEVERITY_LEVELS)]
        severities.append(float(np.clip(level + rng.uniform(-SEVERITY_JITTER, SEVERITY_JITTER), 0.0, 1.0)))
    phantom_seed = [master_seed, index]
    mask_seeds = [[master_seed, index, _MASK_STREAM, k] for k in range(masks_per_case)]
    return phantom_seed, mask_seeds, severities


class DatasetOrganizer:
    """A class to generate, store and load desk datasets."""

    def __init__(
        self,
        base_dir: Union[str, Path] = DATA_DIR,
        logger: Optional[OperationLogger] = None,
        max_workers: int = 1,
    ):
        """
        Initialize the DatasetOrganizer.

        Args:
            base_dir: Dataset root directory
            logger: Operation logger; a default one is created when omitted
            max_workers: Threads used to generate cases in parallel
        """
        self.base_dir = Path(base_dir).resolve()
        self.cases_dir = self.base_dir / "cases"
        self.manifest_file = self.base_dir / MANIFEST_NAME
        self.logger = logger or OperationLogger()
        self.max_workers = max(1, int(max_workers))

    # Generation

    def _generate_case(
        self, index: int, dims, num_classes: int, masks_per_case: int, master_seed: int
    ) -> Dict[str, Any]:
        case_id = f"case_{index:03d}"
        case_dir = self.cases_dir / case_id
        phantom_seed, mask_seeds, severities = case_seeds(master_seed, index, masks_per_case)
        image, gt = gen_phantom(phantom_seed, dims, num_classes)

        entry = {
            "case_id": case_id,
            "index": index,
            "fold": index % NUM_FOLDS,
            "image": self._relative(write_volume(case_dir / "image", image, "f32")),
            "gt": self._relative(write_volume(case_dir / "gt", gt, "u8")),
            "masks": [],
        }
        for k, (seed, severity) in enumerate(zip(mask_seeds, severities)):
            labels = degrade_mask(gt, severity, seed, num_classes)
            error_map, boundary = derive_targets(labels, gt, num_classes)
            quality = seg_quality(labels, gt, num_classes)
            entry["masks"].append(
                {
                    "index": k,
                    "severity": severity,
                    "seed": list(seed),
                    "labels": self._relative(write_volume(case_dir / f"mask_{k}", labels, "u8")),
                    "error_map": self._relative(write_volume(case_dir / f"error_{k}", error_map, "u8")),
                    "boundary": self._relative(write_volume(case_dir / f"boundary_{k}", boundary, "f32")),
                    "seg_dsc": quality["seg_dsc"],
                    "seg_acc": quality["seg_acc"],
                }
            )
        return entry

    def generate(
        self,
        count: int = DESK_CASE_COUNT,
        dims: Sequence[int] = DESK_DIMS,
        num_classes: int = DESK_CLASSES,
        masks_per_case: int = DESK_MASKS_PER_CASE,
        seed: int = MASTER_SEED,
        show_progress: bool = True,
    ) -> Dict[str, Any]:
        """
        Generate phantoms, degraded masks and derived targets, then write the manifest.

        Args:
            count: Number of cases
            dims: Volume extents
            num_classes: Class count C including background
            masks_per_case: Generated masks per case
            seed: Master seed; every case derives its streams from it
            show_progress: Whether to display a progress bar

        Returns:
            dict: The manifest that was written
        """
        if count < 1 or masks_per_case < 1:
            raise ValueError(f"count and masks_per_case must be positive, got {count}, {masks_per_case}")
        dims = tuple(int(n) for n in dims)
        self.cases_dir.mkdir(parents=True, exist_ok=True)

        pbar = tqdm(total=count, desc="Generating cases") if show_progress else None
        entries: Dict[int, Dict[str, Any]] = {}
        failures: List[str] = []

        def generate_single_case_wrapper(index: int):
            try:
                entry = self._generate_case(index, dims, num_classes, masks_per_case, seed)
                self.logger.log_operation(operation_type="GEN_DATA_CASE_SUCCESS", case_id=entry["case_id"])
                return index, entry
            except Exception as e:
                self.logger.log_operation(
                    operation_type="GEN_DATA_CASE_ERROR",
                    case_id=f"case_{index:03d}",
                    success=False,
                    message=str(e),
                    error_code=type(e).__name__,
                )
                failures.append(f"case_{index:03d}: {e}")
                return index, None
            finally:
                if pbar:
                    pbar.update(1)

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [executor.submit(generate_single_case_wrapper, i) for i in range(count)]
            for future in as_completed(futures):
                index, entry = future.result()
                if entry is not None:
                    entries[index] = entry
        if pbar:
            pbar.close()
        if failures:
            raise RuntimeError(f"Dataset generation failed for {len(failures)} case(s): {failures[0]}")

        manifest = {
            "version": MANIFEST_VERSION,
            "metadata": {
                "dims": list(dims),
                "num_classes": num_classes,
                "masks_per_case": masks_per_case,
                "seed": seed,
                "count": count,
                "num_folds": NUM_FOLDS,
            },
            "cases": [entries[i] for i in range(count)],
        }
        self.write_manifest(manifest)
        self.logger.log_operation(
            operation_type="GEN_DATA_COMPLETE", message=f"Wrote {count} cases to {self.base_dir}"
        )
        return manifest

    # Manifest

    def _relative(self, path: Path) -> str:
        return Path(path).relative_to(self.base_dir).as_posix()

    def resolve(self, relative: str) -> Path:
        return self.base_dir / relative

    def write_manifest(self, manifest: Dict[str, Any]) -> Path:
        self.base_dir.mkdir(parents=True, exist_ok=True)
        with open(self.manifest_file, "w", encoding="utf-8") as f:
            yaml.safe_dump(manifest, f, sort_keys=False, default_flow_style=None)
        return self.manifest_file

    def load_manifest(self) -> Dict[str, Any]:
        """
        Read and validate the manifest.

        Raises:
            FileNotFoundError: When the manifest or a referenced volume is missing
            VolumeFormatError: When the manifest is malformed
        """
        if not self.manifest_file.exists():
            raise FileNotFoundError(f"No manifest at {self.manifest_file}")
        with open(self.manifest_file, encoding="utf-8") as f:
            manifest = yaml.safe_load(f)
        if not isinstance(manifest, dict) or manifest.get("version") != MANIFEST_VERSION:
            raise VolumeFormatError(f"{self.manifest_file}: unsupported or missing manifest version")
        for key in ("metadata", "cases"):
            if key not in manifest:
                raise VolumeFormatError(f"{self.manifest_file}: missing '{key}' section")
        for entry in manifest["cases"]:
            paths = [entry["image"], entry["gt"]]
            for mask in entry["masks"]:
                paths += [mask["labels"], mask["error_map"], mask["boundary"]]
            for relative in paths:
                header = self.resolve(relative)
                if not header.exists():
                    raise FileNotFoundError(f"Case {entry['case_id']}: missing volume {header}")
        return manifest

    def find_case(self, manifest: Dict[str, Any], case_id: str) -> Dict[str, Any]:
        for entry in manifest["cases"]:
            if entry["case_id"] == case_id:
                return entry
        raise KeyError(f"Case '{case_id}' not in manifest")

    def split(self, manifest: Dict[str, Any], fold: int = 0, subset: str = "test") -> List[Dict[str, Any]]:
        """
        Cases of one cross-validation subset.

        Args:
            fold: Held-out fold index in 0..num_folds-1
            subset: 'test' for the held-out fold, 'train' for the rest, 'all' for every case
        """
        num_folds = manifest["metadata"].get("num_folds", NUM_FOLDS)
        if not 0 <= fold < num_folds:
            raise ValueError(f"fold must lie in 0..{num_folds - 1}, got {fold}")
        if subset == "all":
            return list(manifest["cases"])
        if subset == "test":
            return [e for e in manifest["cases"] if e["fold"] == fold]
        if subset == "train":
            return [e for e in manifest["cases"] if e["fold"] != fold]
        raise ValueError(f"Unknown subset '{subset}', expected train, test or all")

    # Loading

    def load_case(self, entry: Dict[str, Any], num_classes: int, preprocess_image: bool = True) -> VolumeCase:
        """Read one case with all its masks; the image is preprocessed unless told otherwise."""
        image = read_volume(self.resolve(entry["image"]))
        masks = [
            GeneratedMask(
                labels=read_volume(self.resolve(m["labels"])),
                severity=m["severity"],
                seed=m["seed"],
                error_map=read_volume(self.resolve(m["error_map"])),
                boundary=read_volume(self.resolve(m["boundary"])),
                seg_dsc=m["seg_dsc"],
                seg_acc=m["seg_acc"],
            )
            for m in entry["masks"]
        ]
        return VolumeCase(
            case_id=entry["case_id"],
            image=preprocess(image) if preprocess_image else image,
            gt_labels=read_volume(self.resolve(entry["gt"])),
            num_classes=num_classes,
            masks=masks,
        )

    def load_cases(self, entries: Sequence[Dict[str, Any]], num_classes: int) -> List[VolumeCase]:
        return [self.load_case(entry, num_classes) for entry in entries]

    def verify_case(self, entry: Dict[str, Any], num_classes: int) -> bool:
        """Recompute error maps and boundary targets from stored masks and compare with the stored ones."""
        case = self.load_case(entry, num_classes, preprocess_image=False)
        for mask in case.masks:
            error_map, boundary = derive_targets(mask.labels, case.gt_labels, num_classes)
            if not np.array_equal(error_map, mask.error_map):
                return False
            if not np.array_equal(boundary.astype(np.float32), mask.boundary.astype(np.float32)):
                return False
        return True



def manifest_records(manifest: Dict[str, Any]) -> pd.DataFrame:
    """One row per generated mask with its generation parameters and quality."""
    rows = [
        {
            "case_id": entry["case_id"],
            "fold": entry["fold"],
            "mask_index": m["index"],
            "severity": m["severity"],
            "seg_dsc": m["seg_dsc"],
            "seg_acc": m["seg_acc"],
        }
        for entry in manifest["cases"]
        for m in entry["masks"]
    ]
    return pd.DataFrame(rows)


def seg_dsc_histogram(seg_dsc: Sequence[float], edges: Sequence[float] = HISTOGRAM_EDGES) -> pd.DataFrame:
    """Counts of Seg.DSC values per (x, y] bin; a value of exactly 0 falls in the first bin."""
    edges = list(edges)
    values = pd.Series(list(seg_dsc), dtype=float)
    codes = pd.cut(values, bins=edges, include_lowest=True, labels=False)
    counts = np.bincount(codes.dropna().astype(int), minlength=len(edges) - 1)
    return pd.DataFrame(
        {
            "bin": [f"({lo:g}, {hi:g}]" for lo, hi in zip(edges[:-1], edges[1:])],
            "count": counts,
        }
    )
