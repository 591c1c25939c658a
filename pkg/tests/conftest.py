"""
Shared fixtures: a tiny network config and a tiny generated dataset.
"""

import numpy as np
import pytest

from errmap import generate_dataset
from errmap.core.logger import OperationLogger
from errmap.core.model import AepNetConfig
from errmap.training.trainer import TrainConfig

TINY_DIMS = (16, 16, 16)
TINY_CLASSES = 3


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    """Depth-2 network small enough for finite differences."""
    return AepNetConfig(
        num_classes=TINY_CLASSES,
        depth=2,
        base_channels=4,
        gn_groups=2,
        ceu_hidden=4,
        crop_dims=(8, 8, 8),
    )


@pytest.fixture
def tiny_train_config(tiny_model_config):
    return TrainConfig(
        model=tiny_model_config,
        max_iter=3,
        batch_size=1,
        crop_dims=(8, 8, 8),
        checkpoint_every=1,
        seed=7,
        fold=0,
    )


@pytest.fixture
def logger(tmp_path):
    return OperationLogger(log_dir=tmp_path / "logs")


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Six 16^3 cases with three classes and two masks each."""
    root = tmp_path_factory.mktemp("tiny_dataset")
    data_dir = root / "data"
    manifest = generate_dataset(
        out_dir=data_dir,
        count=6,
        dims=TINY_DIMS,
        num_classes=TINY_CLASSES,
        masks_per_case=2,
        seed=3,
        log_dir=root / "logs",
        show_progress=False,
    )
    return data_dir, manifest
