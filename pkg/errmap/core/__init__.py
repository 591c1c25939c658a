"""
Core package for errmap: autodiff, network primitives, the network, losses
and logging.
"""

from .autodiff import Graph, GraphError, ShapeMismatchError, Tensor, backward, grad_check
from .logger import OperationLogger, TrainingLog
from .losses import LossWeights, compute_losses, total_loss
from .model import AepNetConfig, AepNetModel, predict_volume

__all__ = [
    "Tensor",
    "Graph",
    "backward",
    "grad_check",
    "ShapeMismatchError",
    "GraphError",
    "OperationLogger",
    "TrainingLog",
    "LossWeights",
    "compute_losses",
    "total_loss",
    "AepNetConfig",
    "AepNetModel",
    "predict_volume",
]
