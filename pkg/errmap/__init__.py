"""
errmap - voxel-wise error-map prediction and segmentation quality assessment.
"""

from pathlib import Path
from typing import Dict, Optional, Sequence, Union

from .config.settings import (
    ACDC_BIN_EDGES,
    DATA_DIR,
    DESK_CASE_COUNT,
    DESK_CLASSES,
    DESK_DIMS,
    DESK_MASKS_PER_CASE,
    IBSR_BIN_EDGES,
    LOGS_DIR,
    MASTER_SEED,
)
from .core.logger import OperationLogger
from .core.losses import real_error_rate
from .core.model import AepNetConfig, AepNetModel, predict_volume
from .data.data_organizer import DatasetOrganizer
from .data.volume_io import write_volume
from .data.volumes import one_hot
from .evaluation.ablation import ablation_run
from .evaluation.metrics import binarize_prediction, predicted_accuracy
from .evaluation.reports import (
    EvaluationError,
    MetricsReport,
    binned_report,
    evaluate_cases,
    evaluate_mask,
    export,
    export_slices,
)
from .training.checkpoint import read_checkpoint
from .training.trainer import TrainConfig, TrainResult, train_loop

__version__ = "0.1.0"

PathLike = Union[str, Path]
BIN_EDGES = {"ibsr": IBSR_BIN_EDGES, "acdc": ACDC_BIN_EDGES}


def _as_config(config: Union[TrainConfig, PathLike, None]) -> TrainConfig:
    if config is None:
        return TrainConfig()
    if isinstance(config, TrainConfig):
        return config
    return TrainConfig.from_yaml(config)


def generate_dataset(
    out_dir: PathLike = DATA_DIR,
    count: int = DESK_CASE_COUNT,
    dims: Sequence[int] = DESK_DIMS,
    num_classes: int = DESK_CLASSES,
    masks_per_case: int = DESK_MASKS_PER_CASE,
    seed: int = MASTER_SEED,
    log_dir: PathLike = LOGS_DIR,
    show_progress: bool = True,
    max_workers: int = 1,
) -> Dict:
    """
    Generate a synthetic dataset of phantoms, degraded masks and their targets.

    Args:
        out_dir: Dataset root (manifest.yaml and cases/ are written here)
        count: Number of cases
        dims: Volume extents
        num_classes: Class count C including background
        masks_per_case: Generated masks per case
        seed: Master seed
        log_dir: Directory for the operation log
        show_progress: Whether to show progress bars
        max_workers: Parallel case-generation threads

    Returns:
        dict: The manifest
    """
    logger = OperationLogger(log_dir=log_dir)
    logger.log_operation(
        operation_type="GEN_DATA_START",
        message=f"{count} cases of {tuple(dims)} with {num_classes} classes, seed {seed}",
    )
    organizer = DatasetOrganizer(out_dir, logger=logger, max_workers=max_workers)
    return organizer.generate(count, dims, num_classes, masks_per_case, seed, show_progress=show_progress)


def train_model(
    config: Union[TrainConfig, PathLike, None],
    data_dir: PathLike = DATA_DIR,
    out_dir: PathLike = "./runs/train",
    resume: Optional[PathLike] = None,
    log_dir: PathLike = LOGS_DIR,
    show_progress: bool = True,
) -> TrainResult:
    """
    Train the network on the training folds of a dataset.

    Args:
        config: TrainConfig, path to a YAML config, or None for the defaults
        data_dir: Dataset root
        out_dir: Receives train_log.csv, train_config.yaml and checkpoints
        resume: Optional checkpoint to continue from
        log_dir: Directory for the operation log
        show_progress: Whether to show progress bars
    """
    logger = OperationLogger(log_dir=log_dir)
    return train_loop(_as_config(config), data_dir, out_dir, resume=resume, logger=logger, show_progress=show_progress)


def evaluate_model(
    checkpoint: PathLike,
    data_dir: PathLike = DATA_DIR,
    out_dir: PathLike = "./runs/report",
    split: str = "test",
    fold: int = 0,
    bins: str = "ibsr",
    log_dir: PathLike = LOGS_DIR,
    show_progress: bool = True,
    slices: bool = True,
) -> MetricsReport:
    """
    Evaluate a checkpoint on one split and export the report.

    Args:
        checkpoint: Checkpoint manifest path
        data_dir: Dataset root
        out_dir: Report directory
        split: 'test', 'train' or 'all'
        fold: Held-out fold
        bins: 'ibsr' or 'acdc' Seg.DSC bin edges
        log_dir: Directory for the operation log
        show_progress: Whether to show progress bars
        slices: Whether to export PGM mid-slices of the first case

    Returns:
        MetricsReport: The evaluated report

    Raises:
        EvaluationError: When any mask fails to score; nothing is exported
    """
    if bins not in BIN_EDGES:
        raise ValueError(f"Unknown bins '{bins}', expected one of {sorted(BIN_EDGES)}")
    logger = OperationLogger(log_dir=log_dir)
    model = read_checkpoint(checkpoint).model
    organizer = DatasetOrganizer(data_dir, logger=logger)
    manifest = organizer.load_manifest()
    num_classes = manifest["metadata"]["num_classes"]
    if num_classes != model.config.num_classes:
        raise ValueError(f"Dataset has {num_classes} classes, checkpoint expects {model.config.num_classes}")
    cases = organizer.load_cases(organizer.split(manifest, fold, split), num_classes)

    records = evaluate_cases(model, cases, logger=logger, show_progress=show_progress)
    report = binned_report(records, BIN_EDGES[bins])
    export(report, out_dir)
    if slices and cases:
        first = evaluate_mask(model, cases[0], 0)
        export_slices(cases[0], 0, first["pred_map"], Path(out_dir) / "slices")
    logger.log_operation(operation_type="EVAL_REPORT_WRITTEN", message=f"{len(records)} records to {out_dir}")
    return report


def predict_case(
    checkpoint: PathLike,
    data_dir: PathLike,
    case_id: str,
    mask_index: int,
    out_dir: PathLike,
    log_dir: PathLike = LOGS_DIR,
) -> Dict:
    """
    Predict the error map of one generated mask.

    Returns:
        dict: pred_path (RVOL header of the predicted error map), p_acc,
        c_er (NaN without a CEU) and the real r_er
    """
    logger = OperationLogger(log_dir=log_dir)
    model = read_checkpoint(checkpoint).model
    organizer = DatasetOrganizer(data_dir, logger=logger)
    manifest = organizer.load_manifest()
    case = organizer.load_case(organizer.find_case(manifest, case_id), manifest["metadata"]["num_classes"])
    if not 0 <= mask_index < len(case.masks):
        raise IndexError(f"Case {case_id} has {len(case.masks)} masks, asked for {mask_index}")

    mask = case.masks[mask_index]
    out = predict_volume(model, case.image, one_hot(mask.labels, case.num_classes))
    pred_map = binarize_prediction(out.error_prob.data)
    pred_path = write_volume(Path(out_dir) / f"{case_id}_mask{mask_index}_pred_error", pred_map, "u8")
    result = {
        "pred_path": pred_path,
        "p_acc": predicted_accuracy(pred_map),
        "c_er": out.cer.item() if out.cer is not None else float("nan"),
        "r_er": real_error_rate(mask.error_map),
    }
    logger.log_operation(
        operation_type="PREDICT_CASE_SUCCESS",
        case_id=case_id,
        mask_index=mask_index,
        message=f"pAcc {result['p_acc']:.4f}",
    )
    return result


def run_ablation(
    config: Union[TrainConfig, PathLike, None],
    data_dir: PathLike = DATA_DIR,
    out_dir: PathLike = "./runs/ablation",
    seeds: Sequence[int] = (0, 1, 2),
    log_dir: PathLike = LOGS_DIR,
    show_progress: bool = True,
) -> Dict:
    """Train and evaluate the full network and both ablation variants for every seed."""
    logger = OperationLogger(log_dir=log_dir)
    return ablation_run(_as_config(config), data_dir, out_dir, seeds, logger=logger, show_progress=show_progress)


__all__ = [
    "generate_dataset",
    "train_model",
    "evaluate_model",
    "predict_case",
    "run_ablation",
    "AepNetConfig",
    "AepNetModel",
    "TrainConfig",
    "DatasetOrganizer",
    "OperationLogger",
    "MetricsReport",
    "EvaluationError",
]
