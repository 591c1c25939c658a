"""
End-to-end training of the error-map network with Adam and the poly schedule.
"""

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from tqdm import tqdm

from ..config.settings import (
    AXIS_INDEX,
    BATCH_SIZE,
    CHECKPOINT_EVERY,
    CROP_DIMS,
    FLIP_AXES,
    LR0,
    MASTER_SEED,
    MAX_ITER,
    POLY_POWER,
)
from ..core.autodiff import Graph, GraphError, Tensor, backward
from ..core.logger import OperationLogger, TrainingLog
from ..core.losses import LossWeights, batch_mean, compute_losses
from ..core.model import AepNetConfig, AepNetModel
from ..data.data_organizer import DatasetOrganizer
from ..data.volumes import VolumeCase, mirror_flip, one_hot, random_crop
from .checkpoint import read_checkpoint, write_checkpoint
from .optimizer import AdamState, adam_step, poly_lr

PathLike = Union[str, Path]

SAMPLE_STREAM = 11
CROP_STREAM = 12
FLIP_STREAM = 13

LOG_NAME = "train_log.csv"
CONFIG_NAME = "train_config.yaml"


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, iteration: int, message: str):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class TrainConfig:
    """Every hyperparameter of a training run."""

    model: AepNetConfig = field(default_factory=AepNetConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    lr0: float = LR0
    poly_power: float = POLY_POWER
    max_iter: int = MAX_ITER
    batch_size: int = BATCH_SIZE
    crop_dims: Tuple[int, int, int] = CROP_DIMS
    flip_axes: Tuple[str, ...] = FLIP_AXES
    seed: int = MASTER_SEED
    checkpoint_every: int = CHECKPOINT_EVERY
    fold: int = 0

    def __post_init__(self):
        self.crop_dims = tuple(int(n) for n in self.crop_dims)
        self.flip_axes = tuple(self.flip_axes)
        self.model.crop_dims = self.crop_dims

    def validate(self) -> None:
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.poly_power < 0:
            raise ValueError(f"poly_power must be non-negative, got {self.poly_power}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        unknown = [a for a in self.flip_axes if a not in AXIS_INDEX]
        if unknown:
            raise ValueError(f"flip_axes {unknown} not in {sorted(AXIS_INDEX)}")
        self.model.validate()

    def to_dict(self) -> Dict[str, Any]:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["model"] = self.model.to_dict()
        data["loss_weights"] = self.loss_weights.to_dict()
        data["crop_dims"] = list(self.crop_dims)
        data["flip_axes"] = list(self.flip_axes)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown config keys: {sorted(unknown)}")
        model_data = dict(data.pop("model", None) or {})
        if "crop_dims" in model_data and "crop_dims" in data:
            if tuple(model_data["crop_dims"]) != tuple(data["crop_dims"]):
                raise ValueError(
                    f"model.crop_dims {model_data['crop_dims']} disagrees with crop_dims {data['crop_dims']}"
                )
        if "crop_dims" not in data and "crop_dims" in model_data:
            data["crop_dims"] = model_data["crop_dims"]
        weights = data.pop("loss_weights", None) or {}
        unknown_weights = set(weights) - {"alpha", "beta", "gamma"}
        if unknown_weights:
            raise ValueError(f"Unknown loss_weights keys: {sorted(unknown_weights)}")
        return cls(model=AepNetConfig.from_dict(model_data), loss_weights=LossWeights(**weights), **data)

    @classmethod
    def from_yaml(cls, path: PathLike) -> "TrainConfig":
        with open(path, encoding="utf-8") as f:
            try:
                data = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ValueError(f"{path}: malformed config ({e})") from e
        if data is not None and not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a mapping of sections")
        config = cls.from_dict(data)
        config.validate()
        return config

    def to_yaml(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False, default_flow_style=None)
        return path


@dataclass
class TrainResult:
    model: AepNetModel
    checkpoint_path: Path
    log_path: Path
    iterations: int


def sample_crop(cases: Sequence[VolumeCase], config: TrainConfig, iteration: int, slot: int) -> VolumeCase:
    """
    Draw the training crop of one batch slot.

    Each draw uses its own stream keyed by (seed, stream, iteration, slot), so
    any iteration can be reproduced without replaying the earlier ones.
    """
    rng = np.random.default_rng([config.seed, SAMPLE_STREAM, iteration, slot])
    case = cases[int(rng.integers(len(cases)))]
    case = case.select_mask(int(rng.integers(len(case.masks))))
    crop = random_crop(case, config.crop_dims, [config.seed, CROP_STREAM, iteration, slot])
    return mirror_flip(crop, config.flip_axes, [config.seed, FLIP_STREAM, iteration, slot])


def crop_inputs(crop: VolumeCase) -> Tuple[Tensor, Tensor]:
    """Network inputs of a single-mask case: image [1, D, H, W] and one-hot mask [C, D, H, W]."""
    mask = crop.masks[0]
    return Tensor(crop.image[None]), Tensor(one_hot(mask.labels, crop.num_classes))


def train_step(
    model: AepNetModel,
    crops: Sequence[VolumeCase],
    weights: LossWeights,
    optimizer: AdamState,
    lr: float,
    iteration: int,
    require_all_gradients: bool = False,
) -> Dict[str, float]:
    """
    Forward, backward and one Adam update on a batch of crops.

    Returns:
        dict: Batch-mean loss terms

    Raises:
        TrainingDivergedError: When the total loss is not finite
        GraphError: When ``require_all_gradients`` and a parameter is missing
            from the graph or has no path to the loss
    """
    breakdowns = []
    with Graph() as graph:
        for crop in crops:
            image, mask = crop_inputs(crop)
            out = model.forward(image, mask)
            mask_entry = crop.masks[0]
            breakdowns.append(compute_losses(out, mask_entry.error_map, mask_entry.boundary, weights))
        loss = batch_mean([b.total for b in breakdowns])

    values = {key: float(np.mean([b.values()[key] for b in breakdowns])) for key in breakdowns[0].values()}
    if not np.isfinite(loss.item()):
        raise TrainingDivergedError(iteration, f"Non-finite loss {loss.item()} at iteration {iteration}")

    grads = backward(graph, loss)
    by_name = {p.name: g.data for p, g in grads.items()}
    if require_all_gradients:
        unreached = {p.name for p in grads.unreached}
        dead = [name for name in model.params if name not in by_name or name in unreached]
        if dead:
            raise GraphError(f"No gradient reached {len(dead)} parameter(s): {dead[:5]}")
    adam_step(model.params, by_name, optimizer, lr)
    return values


def train_loop(
    config: TrainConfig,
    data_dir: PathLike,
    out_dir: PathLike,
    resume: Optional[PathLike] = None,
    logger: Optional[OperationLogger] = None,
    show_progress: bool = True,
) -> TrainResult:
    """
    Train on the training folds of a dataset.

    Iterations are numbered from 1; iteration i runs with the learning rate
    poly_lr(i - 1). A metrics row is appended per iteration and a checkpoint
    written every ``checkpoint_every`` iterations and after the last one.

    Args:
        config: Training configuration
        data_dir: Dataset root holding the manifest
        out_dir: Directory for the log, the config copy and the checkpoints
        resume: Checkpoint to continue from
        logger: Operation logger
        show_progress: Whether to display a progress bar

    Returns:
        TrainResult: The trained model and where its artifacts went
    """
    config.validate()
    logger = logger or OperationLogger()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    organizer = DatasetOrganizer(data_dir, logger=logger)
    manifest = organizer.load_manifest()
    num_classes = manifest["metadata"]["num_classes"]
    if num_classes != config.model.num_classes:
        raise ValueError(f"Dataset has {num_classes} classes, model expects {config.model.num_classes}")
    cases = organizer.load_cases(organizer.split(manifest, config.fold, "train"), num_classes)
    if not cases:
        raise ValueError(f"No training cases outside fold {config.fold}")

    if resume is not None:
        checkpoint = read_checkpoint(resume, expected_config=config.model)
        model, optimizer, start = checkpoint.model, checkpoint.optimizer, checkpoint.iteration
        if start > config.max_iter:
            raise ValueError(f"Checkpoint iteration {start} exceeds max_iter {config.max_iter}")
        training_log = TrainingLog(out_dir / LOG_NAME, resume_from=start)
        logger.log_operation(operation_type="TRAIN_RESUMED", iteration=start, message=str(resume))
    else:
        model, optimizer, start = AepNetModel.build(config.model, config.seed), AdamState(), 0
        training_log = TrainingLog(out_dir / LOG_NAME)
    config.to_yaml(out_dir / CONFIG_NAME)
    logger.log_operation(
        operation_type="TRAIN_STARTED",
        iteration=start,
        message=f"{len(cases)} cases, {model.parameter_count()} parameters, variant {config.model.variant}",
    )

    pbar = tqdm(total=config.max_iter - start, desc="Training") if show_progress else None
    for iteration in range(start + 1, config.max_iter + 1):
        lr = poly_lr(iteration - 1, config.max_iter, config.lr0, config.poly_power)
        crops = [sample_crop(cases, config, iteration, slot) for slot in range(config.batch_size)]
        try:
            values = train_step(
                model, crops, config.loss_weights, optimizer, lr, iteration, require_all_gradients=iteration == 1
            )
        except TrainingDivergedError as e:
            dump = out_dir / f"diverged_iter_{iteration:06d}.yaml"
            with open(dump, "w", encoding="utf-8") as f:
                yaml.safe_dump(
                    {
                        "iteration": iteration,
                        "lr": lr,
                        "crops": [
                            {"case_id": c.case_id, "seed": c.masks[0].seed, "severity": c.masks[0].severity}
                            for c in crops
                        ],
                    },
                    f,
                    sort_keys=False,
                )
            logger.log_operation(
                operation_type="TRAIN_DIVERGED",
                iteration=iteration,
                success=False,
                message=str(e),
                error_code=type(e).__name__,
            )
            if pbar:
                pbar.close()
            raise
        training_log.append(iteration, values, lr)

        if iteration % config.checkpoint_every == 0 or iteration == config.max_iter:
            checkpoint_path = write_checkpoint(
                out_dir / "checkpoints" / f"iter_{iteration:06d}",
                model,
                optimizer,
                iteration,
                extra={"seed": config.seed, "fold": config.fold},
            )
            logger.log_operation(
                operation_type="TRAIN_CHECKPOINT_WRITTEN", iteration=iteration, message=str(checkpoint_path)
            )
        if pbar:
            pbar.update(1)
            pbar.set_postfix(loss=f"{values['loss_total']:.4f}")
    if pbar:
        pbar.close()

    final_path = write_checkpoint(
        out_dir / "final", model, optimizer, config.max_iter, extra={"seed": config.seed, "fold": config.fold}
    )
    logger.log_operation(operation_type="TRAIN_COMPLETE", iteration=config.max_iter, message=str(final_path))
    return TrainResult(model, final_path, out_dir / LOG_NAME, config.max_iter)
