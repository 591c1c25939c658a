"""
Per-mask evaluation records, Seg.DSC-binned reports, correlation summaries
and their export to CSV, YAML and PGM slices.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import yaml
from tqdm import tqdm

from ..config.settings import IBSR_BIN_EDGES, RECORD_COLUMNS
from ..core.logger import OperationLogger
from ..core.losses import real_error_rate
from ..core.model import AepNetModel, predict_volume
from ..data.volumes import VolumeCase, one_hot
from .metrics import binarize_prediction, error_map_metrics, mae, pearson, predicted_accuracy, spearman

PathLike = Union[str, Path]

METRIC_COLUMNS = ["seg_dsc", "seg_acc", "dsc", "acc", "prec", "recl", "p_acc", "r_er", "c_er"]
SEG_DSC_WEIGHTING = "unweighted mean over foreground classes"


@dataclass
class MetricsReport:
    """Records, binned and overall means, and the correlation summary of one evaluation."""

    records: pd.DataFrame
    bins: pd.DataFrame
    overall: Dict[str, float]
    correlation: Dict[str, float]
    bin_edges: List[float] = field(default_factory=list)


class EvaluationError(RuntimeError):
    """Raised after a batch evaluation in which some masks could not be scored."""

    def __init__(self, failures: List[str], records: pd.DataFrame):
        self.failures = failures
        self.records = records
        super().__init__(f"Evaluation failed for {len(failures)} mask(s): {failures[0]}")


def evaluate_mask(model: AepNetModel, case: VolumeCase, mask_index: int) -> Dict:
    """
    Predict the error map of one generated mask and score it.

    Returns:
        dict: One record with the RECORD_COLUMNS keys plus the binarized
        prediction under ``pred_map``
    """
    mask = case.masks[mask_index]
    out = predict_volume(model, case.image, one_hot(mask.labels, case.num_classes))
    pred_map = binarize_prediction(out.error_prob.data)
    record = {
        "case_id": case.case_id,
        "mask_index": mask_index,
        "severity": mask.severity,
        "seg_dsc": mask.seg_dsc,
        "seg_acc": mask.seg_acc,
        **error_map_metrics(out.error_prob.data, mask.error_map),
        "p_acc": predicted_accuracy(pred_map),
        "r_er": real_error_rate(mask.error_map),
        "c_er": out.cer.item() if out.cer is not None else float("nan"),
        "pred_map": pred_map,
    }
    return record


def evaluate_cases(
    model: AepNetModel,
    cases: Sequence[VolumeCase],
    logger: Optional[OperationLogger] = None,
    show_progress: bool = True,
) -> pd.DataFrame:
    """
    Score every generated mask of every case.

    Every mask is attempted; failures are logged as they happen.

    Returns:
        pd.DataFrame: One row per (case, mask) with the RECORD_COLUMNS

    Raises:
        EvaluationError: After the loop, when any mask failed; carries the
            failure messages and the records that did score
    """
    rows = []
    failures = []
    items = [(case, k) for case in cases for k in range(len(case.masks))]
    for case, k in tqdm(items, desc="Evaluating", disable=not show_progress):
        try:
            record = evaluate_mask(model, case, k)
        except Exception as e:
            if logger:
                logger.log_operation(
                    operation_type="EVAL_CASE_ERROR",
                    case_id=case.case_id,
                    mask_index=k,
                    success=False,
                    message=str(e),
                    error_code=type(e).__name__,
                )
            failures.append(f"{case.case_id} mask {k}: {type(e).__name__}: {e}")
            continue
        record.pop("pred_map")
        rows.append(record)
    if logger:
        logger.log_operation(
            operation_type="EVAL_COMPLETE",
            success=not failures,
            message=f"{len(rows)} of {len(items)} masks scored",
        )
    records = pd.DataFrame(rows, columns=RECORD_COLUMNS)
    if failures:
        raise EvaluationError(failures, records)
    return records


def _bin_label(lo: float, hi: float) -> str:
    return f"({lo:g}, {hi:g}]"


def _safe(fn, xs, ys) -> float:
    try:
        return fn(xs, ys)
    except ValueError:
        return float("nan")


def correlation_summary(records: pd.DataFrame) -> Dict[str, float]:
    """PCC_a and MAE between Seg.Acc and pAcc, PCC_d between Seg.DSC and pAcc, plus Spearman."""
    summary = {
        "pcc_a": _safe(pearson, records["seg_acc"], records["p_acc"]),
        "pcc_d": _safe(pearson, records["seg_dsc"], records["p_acc"]),
        "mae": _safe(mae, records["seg_acc"], records["p_acc"]),
        "spearman_a": _safe(spearman, records["seg_acc"], records["p_acc"]),
    }
    with_cer = records.dropna(subset=["c_er"])
    if len(with_cer):
        summary["cer_mae"] = _safe(mae, with_cer["r_er"], with_cer["c_er"])
    return summary


def binned_report(records: pd.DataFrame, bin_edges: Sequence[float] = IBSR_BIN_EDGES) -> MetricsReport:
    """
    Bin records on Seg.DSC with half-open (x, y] bins.

    Records at or below the lowest edge form an ``underflow`` row and those
    above the highest edge an ``overflow`` row, so the populations always sum
    to the record count.

    Args:
        records: Output of ``evaluate_cases``
        bin_edges: Strictly increasing edges

    Returns:
        MetricsReport: Per-bin and overall metric means plus correlations
    """
    edges = [float(e) for e in bin_edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges[:-1], edges[1:])):
        raise ValueError(f"bin_edges must be strictly increasing with at least two edges, got {edges}")

    records = records.astype({col: float for col in METRIC_COLUMNS})
    seg_dsc = records["seg_dsc"]
    labels = ["underflow"] + [_bin_label(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])] + ["overflow"]
    bins = pd.cut(seg_dsc, bins=[-np.inf] + edges + [np.inf], labels=labels, right=True)
    grouped = records.assign(bin=bins).groupby("bin", observed=False)

    table = grouped[METRIC_COLUMNS].mean()
    table.insert(0, "count", grouped.size())
    table.index = pd.Index(table.index.astype(str), name="bin")
    table = table.reindex(labels).reset_index()
    table["count"] = table["count"].fillna(0).astype(int)

    overall = {"count": int(len(records))}
    overall.update({col: float(records[col].mean()) for col in METRIC_COLUMNS})
    return MetricsReport(
        records=records.reset_index(drop=True),
        bins=table,
        overall=overall,
        correlation=correlation_summary(records) if len(records) else {},
        bin_edges=edges,
    )


def report_table(report: MetricsReport) -> pd.DataFrame:
    """Per-bin rows followed by the overall row."""
    overall = pd.DataFrame([{"bin": "overall", **report.overall}])
    return pd.concat([report.bins, overall], ignore_index=True)


def write_pgm(path: PathLike, image: np.ndarray, low: Optional[float] = None, high: Optional[float] = None) -> Path:
    """Write a 2-D array as an 8-bit binary portable graymap, scaled linearly from [low, high]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D slice, got shape {image.shape}")
    low = float(image.min()) if low is None else low
    high = float(image.max()) if high is None else high
    span = high - low
    scaled = np.zeros(image.shape) if span <= 0 else (image - low) / span
    pixels = np.clip(np.round(scaled * 255), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + pixels.tobytes())
    return path


def export_slices(case: VolumeCase, mask_index: int, pred_map: np.ndarray, out_dir: PathLike) -> List[Path]:
    """Mid-slices (along the first axis) of image, mask, real and predicted error maps."""
    out_dir = Path(out_dir)
    mask = case.masks[mask_index]
    mid = case.dims[0] // 2
    stem = f"{case.case_id}_mask{mask_index}"
    top = max(case.num_classes - 1, 1)
    return [
        write_pgm(out_dir / f"{stem}_image.pgm", case.image[mid]),
        write_pgm(out_dir / f"{stem}_mask.pgm", mask.labels[mid], 0, top),
        write_pgm(out_dir / f"{stem}_gt.pgm", case.gt_labels[mid], 0, top),
        write_pgm(out_dir / f"{stem}_error_real.pgm", mask.error_map[mid], 0, 1),
        write_pgm(out_dir / f"{stem}_error_pred.pgm", pred_map[mid], 0, 1),
    ]


def _plain(value):
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    return value


def export(report: MetricsReport, out_dir: PathLike) -> Dict[str, Path]:
    """
    Write a report to ``out_dir``.

    Files: records.csv (RECORD_COLUMNS), binned.csv, summary.yaml and the
    scatter pairs scatter_acc_pacc.csv, scatter_dsc_pacc.csv and
    scatter_dsc_acc.csv.

    Returns:
        dict: Written paths by role
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out_dir / "records.csv",
        "binned": out_dir / "binned.csv",
        "summary": out_dir / "summary.yaml",
    }
    report.records.to_csv(paths["records"], index=False, columns=RECORD_COLUMNS)
    report_table(report).to_csv(paths["binned"], index=False)

    scatter_pairs = {
        "scatter_acc_pacc": ("seg_acc", "p_acc"),
        "scatter_dsc_pacc": ("seg_dsc", "p_acc"),
        "scatter_dsc_acc": ("seg_dsc", "seg_acc"),
    }
    for role, (x, y) in scatter_pairs.items():
        paths[role] = out_dir / f"{role}.csv"
        report.records[["case_id", "mask_index", x, y]].to_csv(paths[role], index=False)

    summary = {
        "records": len(report.records),
        "bin_edges": report.bin_edges,
        "seg_dsc_weighting": SEG_DSC_WEIGHTING,
        "overall": {k: _plain(v) for k, v in report.overall.items()},
        "correlation": {k: _plain(v) for k, v in report.correlation.items()},
        "bins": [{k: _plain(v) for k, v in row.items()} for row in report.bins.to_dict(orient="records")],
    }
    with open(paths["summary"], "w", encoding="utf-8") as f:
        yaml.safe_dump(summary, f, sort_keys=False)
    return paths
