"""
Error-map, segmentation-quality and correlation metrics.

Reports and the ablation comparison live in ``errmap.evaluation.reports`` and
``errmap.evaluation.ablation``; they depend on the data and training packages
and are not imported here.
"""

from .metrics import error_map_metrics, mae, pearson, predicted_accuracy, seg_quality, spearman

__all__ = [
    "error_map_metrics",
    "predicted_accuracy",
    "seg_quality",
    "pearson",
    "spearman",
    "mae",
]
