"""
Checkpoints: a YAML manifest of named tensor shapes plus one little-endian
f64 payload holding the parameters and the Adam moments in manifest order.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import yaml

from ..config.settings import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from ..core.model import AepNetConfig, AepNetModel
from .optimizer import AdamState

PathLike = Union[str, Path]
PAYLOAD_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    """Raised for unreadable or incompatible checkpoints."""


@dataclass
class Checkpoint:
    model: AepNetModel
    optimizer: AdamState
    iteration: int
    extra: Dict[str, Any]


def _paths(path: PathLike):
    manifest = Path(path).with_suffix(".ckpt")
    return manifest, manifest.with_suffix(".bin")


def write_checkpoint(
    path: PathLike,
    model: AepNetModel,
    optimizer: AdamState,
    iteration: int,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Write model parameters, optimizer state and the iteration counter.

    Returns:
        Path: The manifest path
    """
    manifest_path, payload_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)

    entries = []
    chunks = []
    offset = 0

    def add(group: str, name: str, data: np.ndarray):
        nonlocal offset
        entries.append({"group": group, "name": name, "shape": list(data.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(data, dtype=PAYLOAD_DTYPE).tobytes(order="C"))
        offset += int(data.size)

    for name, param in model.params.items():
        add("param", name, param.data)
    for name in model.params:
        if name in optimizer.m:
            add("adam_m", name, optimizer.m[name])
            add("adam_v", name, optimizer.v[name])

    manifest = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "iteration": int(iteration),
        "model_config": model.config.to_dict(),
        "optimizer": {
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "step": optimizer.step,
        },
        "payload": payload_path.name,
        "payload_values": offset,
        "tensors": entries,
        "extra": extra or {},
    }
    payload_path.write_bytes(b"".join(chunks))
    with open(manifest_path, "w", encoding="utf-8") as f:
        yaml.safe_dump(manifest, f, sort_keys=False, default_flow_style=None)
    return manifest_path


def read_checkpoint(path: PathLike, expected_config: Optional[AepNetConfig] = None) -> Checkpoint:
    """
    Read a checkpoint written by ``write_checkpoint``.

    Args:
        path: Manifest path (the .bin payload is found next to it)
        expected_config: When given, the stored model config must match it

    Raises:
        CheckpointError: On a bad magic/version, payload size or tensor shape,
            or a config mismatch
    """
    manifest_path, _ = _paths(path)
    if not manifest_path.exists():
        raise CheckpointError(f"No checkpoint at {manifest_path}")
    try:
        with open(manifest_path, encoding="utf-8") as f:
            manifest = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise CheckpointError(f"{manifest_path}: unreadable manifest ({e})") from e
    if not isinstance(manifest, dict) or manifest.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{manifest_path}: not an errmap checkpoint")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{manifest_path}: version {manifest.get('version')}, expected {CHECKPOINT_VERSION}"
        )

    try:
        config = AepNetConfig.from_dict(manifest["model_config"])
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"{manifest_path}: invalid model config ({e})") from e
    if expected_config is not None and expected_config.to_dict() != config.to_dict():
        raise CheckpointError(
            f"{manifest_path}: stored model config {config.to_dict()} does not match {expected_config.to_dict()}"
        )

    payload_path = manifest_path.parent / manifest["payload"]
    if not payload_path.exists():
        raise CheckpointError(f"{manifest_path}: payload {payload_path.name} not found")
    payload = payload_path.read_bytes()
    expected_bytes = int(manifest["payload_values"]) * PAYLOAD_DTYPE.itemsize
    if len(payload) != expected_bytes:
        raise CheckpointError(
            f"{payload_path}: size mismatch, expected {expected_bytes} bytes, found {len(payload)}"
        )
    values = np.frombuffer(payload, dtype=PAYLOAD_DTYPE)

    model = AepNetModel.build(config, seed=0)
    opt_fields = manifest["optimizer"]
    optimizer = AdamState(
        beta1=opt_fields["beta1"], beta2=opt_fields["beta2"], eps=opt_fields["eps"], step=opt_fields["step"]
    )
    state = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        data = values[entry["offset"] : entry["offset"] + count].reshape(shape).astype(np.float64)
        if entry["group"] == "param":
            state[entry["name"]] = data
        elif entry["group"] == "adam_m":
            optimizer.m[entry["name"]] = data
        elif entry["group"] == "adam_v":
            optimizer.v[entry["name"]] = data
        else:
            raise CheckpointError(f"{manifest_path}: unknown tensor group '{entry['group']}'")
    try:
        model.load_state_dict(state)
    except ValueError as e:
        raise CheckpointError(f"{manifest_path}: {e}") from e
    return Checkpoint(model, optimizer, int(manifest["iteration"]), manifest.get("extra") or {})
