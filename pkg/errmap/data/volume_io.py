"""
RVOL volume format: a human-readable header file plus a raw payload file.

Header (``<name>.rvol``)::

    RVOL 1
    dims: 32 32 32
    channels: 1
    dtype: f32
    byte_order: little
    order: row-major
    payload: <name>.raw

The payload holds product(dims) * channels values, little-endian, row-major,
channel-major when channels > 1.
"""

from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from ..config.settings import RVOL_DTYPES, RVOL_MAGIC, RVOL_VERSION

PathLike = Union[str, Path]


class VolumeFormatError(ValueError):
    """Raised for corrupt or inconsistent RVOL files."""


def _dtype_tag(array: np.ndarray, dtype: str = None) -> str:
    if dtype is not None:
        if dtype not in RVOL_DTYPES:
            raise VolumeFormatError(f"Unknown dtype '{dtype}', expected one of {sorted(RVOL_DTYPES)}")
        return dtype
    if array.dtype == np.uint8 or array.dtype == bool:
        return "u8"
    if np.issubdtype(array.dtype, np.integer):
        return "u8"
    return "f32"


def write_volume(path: PathLike, volume: np.ndarray, dtype: str = None) -> Path:
    """
    Write a volume as an RVOL header/payload pair.

    Args:
        path: Header path; the payload goes next to it with a .raw suffix
        volume: [D, H, W] or [C, D, H, W] array
        dtype: 'f32', 'f64' or 'u8'; inferred from the array when omitted

    Returns:
        Path: The header path
    """
    header_path = Path(path).with_suffix(".rvol")
    payload_path = header_path.with_suffix(".raw")
    volume = np.asarray(volume)
    if volume.ndim == 3:
        channels, dims = 1, volume.shape
    elif volume.ndim == 4:
        channels, dims = volume.shape[0], volume.shape[1:]
    else:
        raise VolumeFormatError(f"Volumes must be 3-D or 4-D, got shape {volume.shape}")
    tag = _dtype_tag(volume, dtype)
    if tag == "u8" and volume.size and (volume.min() < 0 or volume.max() > 255):
        raise VolumeFormatError(f"Values span [{volume.min()}, {volume.max()}], not representable as u8")

    header_path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(volume, dtype=np.dtype(RVOL_DTYPES[tag])).tobytes(order="C")
    payload_path.write_bytes(payload)
    header = "\n".join(
        [
            f"{RVOL_MAGIC} {RVOL_VERSION}",
            f"dims: {' '.join(str(n) for n in dims)}",
            f"channels: {channels}",
            f"dtype: {tag}",
            "byte_order: little",
            "order: row-major",
            f"payload: {payload_path.name}",
        ]
    )
    header_path.write_text(header + "\n", encoding="utf-8")
    return header_path


def read_header(path: PathLike) -> Dict[str, str]:
    header_path = Path(path).with_suffix(".rvol")
    try:
        lines = header_path.read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as e:
        raise VolumeFormatError(f"{header_path}: header is not text") from e
    if not lines or lines[0].split() != [RVOL_MAGIC, str(RVOL_VERSION)]:
        raise VolumeFormatError(f"{header_path}: missing '{RVOL_MAGIC} {RVOL_VERSION}' magic line")
    fields = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise VolumeFormatError(f"{header_path}: malformed header line '{line}'")
        fields[key.strip()] = value.strip()
    missing = {"dims", "channels", "dtype", "byte_order", "order", "payload"} - fields.keys()
    if missing:
        raise VolumeFormatError(f"{header_path}: header lacks {sorted(missing)}")
    return fields


def _parse_layout(header_path: Path, fields: Dict[str, str]) -> Tuple[Tuple[int, ...], int, str]:
    try:
        dims = tuple(int(n) for n in fields["dims"].split())
        channels = int(fields["channels"])
    except ValueError as e:
        raise VolumeFormatError(f"{header_path}: non-integer dims/channels") from e
    if len(dims) != 3 or min(dims) < 1 or channels < 1:
        raise VolumeFormatError(f"{header_path}: invalid dims {dims} / channels {channels}")
    if fields["dtype"] not in RVOL_DTYPES:
        raise VolumeFormatError(f"{header_path}: unknown dtype '{fields['dtype']}'")
    if fields["byte_order"] != "little" or fields["order"] != "row-major":
        raise VolumeFormatError(
            f"{header_path}: unsupported layout {fields['byte_order']}/{fields['order']}"
        )
    return dims, channels, fields["dtype"]


def read_volume(path: PathLike) -> np.ndarray:
    """
    Read an RVOL volume.

    Returns:
        np.ndarray: float64 for f32/f64 payloads, uint8 for u8 payloads;
        [D, H, W] when channels == 1, else [C, D, H, W]
    """
    header_path = Path(path).with_suffix(".rvol")
    fields = read_header(header_path)
    dims, channels, tag = _parse_layout(header_path, fields)
    payload_path = header_path.parent / fields["payload"]
    if not payload_path.exists():
        raise VolumeFormatError(f"{header_path}: payload {payload_path.name} not found")
    dtype = np.dtype(RVOL_DTYPES[tag])
    payload = payload_path.read_bytes()
    expected = int(np.prod(dims)) * channels * dtype.itemsize
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{payload_path}: size mismatch, expected {expected} bytes, found {len(payload)}"
        )
    values = np.frombuffer(payload, dtype=dtype)
    shape = dims if channels == 1 else (channels,) + dims
    values = values.reshape(shape)
    if tag == "u8":
        return values.astype(np.uint8)
    return values.astype(np.float64)
