"""
Optimization, checkpoints and the training loop.
"""

from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .optimizer import AdamState, adam_step, poly_lr
from .trainer import TrainConfig, TrainingDivergedError, train_loop

__all__ = [
    "AdamState",
    "adam_step",
    "poly_lr",
    "CheckpointError",
    "read_checkpoint",
    "write_checkpoint",
    "TrainConfig",
    "TrainingDivergedError",
    "train_loop",
]
