"""
AEP-Net: the MEP u-net over one-hot masks, the CBFT u-net over the image,
encoder concatenation sharing, decoder boundary-aware attention and the CEU
head regressing the error rate.

The same module also builds the two ablation variants: ``no_ceu`` (CEU
removed) and ``plain_concat_unet`` (a single u-net over the concatenated
image and one-hot mask).
"""

from collections import OrderedDict
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from ..config.settings import (
    CROP_DIMS,
    DESK_CLASSES,
    MODEL_BASE_CHANNELS,
    MODEL_CEU_HIDDEN,
    MODEL_DEPTH,
    MODEL_GN_GROUPS,
    MODEL_VARIANTS,
)
from .autodiff import ShapeMismatchError, Tensor, add, linear, mul, relu, reshape, sigmoid
from .nn_ops import (
    ConvSpec,
    concat_channels,
    conv3d,
    global_avg_pool,
    group_norm,
    max_pool3d,
    pad_to_multiple,
    softmax_channels,
    transposed_conv3d,
)


@dataclass
class AepNetConfig:
    """Topology of the network."""

    num_classes: int = DESK_CLASSES
    depth: int = MODEL_DEPTH
    base_channels: int = MODEL_BASE_CHANNELS
    gn_groups: int = MODEL_GN_GROUPS
    ceu_hidden: int = MODEL_CEU_HIDDEN
    ceu_channels: Optional[int] = None
    crop_dims: Tuple[int, int, int] = CROP_DIMS
    variant: str = "full"
    plain_base_channels: Optional[int] = None
    plain_gn_groups: Optional[int] = None

    def __post_init__(self):
        self.crop_dims = tuple(int(n) for n in self.crop_dims)
        if self.ceu_channels is None:
            self.ceu_channels = max(self.channels[-1] // 2, self.gn_groups) if self.depth >= 1 else self.gn_groups

    @property
    def channels(self) -> List[int]:
        return [self.base_channels * 2 ** level for level in range(self.depth)]

    @property
    def has_ceu(self) -> bool:
        return self.variant == "full"

    def validate(self) -> None:
        if self.variant not in MODEL_VARIANTS:
            raise ValueError(f"Unknown variant '{self.variant}', expected one of {MODEL_VARIANTS}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1 or self.gn_groups < 1 or self.base_channels % self.gn_groups:
            raise ValueError(
                f"base_channels ({self.base_channels}) must be divisible by gn_groups ({self.gn_groups})"
            )
        if self.ceu_channels % self.gn_groups:
            raise ValueError(f"ceu_channels ({self.ceu_channels}) must be divisible by gn_groups ({self.gn_groups})")
        if self.ceu_hidden < 1:
            raise ValueError(f"ceu_hidden must be positive, got {self.ceu_hidden}")
        multiple = 2 ** self.depth
        if len(self.crop_dims) != 3 or any(n < multiple or n % multiple for n in self.crop_dims):
            raise ValueError(f"crop extents {self.crop_dims} must be positive multiples of 2^depth = {multiple}")
        if self.variant == "plain_concat_unet":
            base = self.plain_base_channels or self.base_channels
            groups = self.plain_gn_groups or self.gn_groups
            if base % groups:
                raise ValueError(f"plain_base_channels ({base}) must be divisible by plain_gn_groups ({groups})")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["crop_dims"] = list(self.crop_dims)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "AepNetConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown model config keys: {sorted(unknown)}")
        return cls(**data)


class ForwardOutput(NamedTuple):
    error_prob: Tensor
    boundary_pred: Optional[Tensor]
    cer: Optional[Tensor]


def _glorot(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in = shape[1] * receptive
    fan_out = shape[0] * receptive
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class _ParamBuilder:
    """Creates named parameters in a fixed order from one seeded stream."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()

    def _add(self, name: str, data: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"Duplicate parameter '{name}'")
        self.params[name] = Tensor(data, requires_grad=True, name=name)

    def conv(self, prefix: str, spec: ConvSpec) -> None:
        self._add(f"{prefix}.weight", _glorot(self.rng, spec.weight_shape))
        self._add(f"{prefix}.bias", np.zeros(spec.out_channels))

    def up(self, prefix: str, spec: ConvSpec) -> None:
        self._add(f"{prefix}.weight", _glorot(self.rng, spec.transposed_weight_shape))
        self._add(f"{prefix}.bias", np.zeros(spec.out_channels))

    def norm(self, prefix: str, channels: int) -> None:
        self._add(f"{prefix}.gamma", np.ones(channels))
        self._add(f"{prefix}.beta", np.zeros(channels))

    def dense(self, prefix: str, n_in: int, n_out: int) -> None:
        self._add(f"{prefix}.weight", _glorot(self.rng, (n_out, n_in)))
        self._add(f"{prefix}.bias", np.zeros(n_out))

    def block(self, prefix: str, c_in: int, c_out: int) -> None:
        for unit, c in enumerate((c_in, c_out)):
            self.conv(f"{prefix}.conv{unit}", ConvSpec(c, c_out, (3, 3, 3), 1, 1))
            self.norm(f"{prefix}.gn{unit}", c_out)


def _unet_encoder_params(builder: _ParamBuilder, prefix: str, in_channels: List[int], channels: List[int]) -> None:
    for level, (c_in, c_out) in enumerate(zip(in_channels, channels)):
        builder.block(f"{prefix}.enc{level}", c_in, c_out)


def _unet_decoder_params(builder: _ParamBuilder, prefix: str, channels: List[int]) -> None:
    for level in range(len(channels) - 2, -1, -1):
        builder.up(f"{prefix}.dec{level}.up", ConvSpec(channels[level + 1], channels[level], (2, 2, 2), 2, 0))
        builder.block(f"{prefix}.dec{level}", 2 * channels[level], channels[level])


def plain_budget_base(config: AepNetConfig) -> Tuple[int, int]:
    """
    Base width and group count for the plain u-net whose parameter count is
    closest to the full network's.
    """
    target = AepNetModel.build(replace(config, variant="full"), seed=0).parameter_count()
    best = None
    for base in range(1, 4 * config.base_channels + 1):
        groups = max(g for g in range(1, config.gn_groups + 1) if base % g == 0)
        trial = replace(config, variant="plain_concat_unet", plain_base_channels=base, plain_gn_groups=groups)
        count = AepNetModel.build(trial, seed=0).parameter_count()
        deviation = abs(count - target) / target
        if best is None or deviation < best[0]:
            best = (deviation, base, groups)
    return best[1], best[2]


class AepNetModel:
    """Named parameters plus the config that shaped them."""

    def __init__(self, config: AepNetConfig, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.params = params

    @classmethod
    def build(cls, config: AepNetConfig, seed: int) -> "AepNetModel":
        """
        Build and initialize a model deterministically from ``seed``.

        Weights are uniform in +/- sqrt(6 / (fan_in + fan_out)); biases and
        group-norm shifts are zero, group-norm scales one.
        """
        config.validate()
        builder = _ParamBuilder(seed)
        channels = config.channels
        if config.variant == "plain_concat_unet":
            base = config.plain_base_channels or config.base_channels
            plain_channels = [base * 2 ** level for level in range(config.depth)]
            in_channels = [1 + config.num_classes] + plain_channels[:-1]
            _unet_encoder_params(builder, "plain", in_channels, plain_channels)
            _unet_decoder_params(builder, "plain", plain_channels)
            builder.conv("plain.head", ConvSpec(plain_channels[0], 2, (1, 1, 1)))
            return cls(config, builder.params)

        cbft_in = [1] + channels[:-1]
        _unet_encoder_params(builder, "cbft", cbft_in, channels)
        _unet_decoder_params(builder, "cbft", channels)
        builder.conv("cbft.head", ConvSpec(channels[0], 1, (1, 1, 1)))

        mep_in = [config.num_classes + channels[0]] + [
            channels[level - 1] + channels[level] for level in range(1, config.depth)
        ]
        _unet_encoder_params(builder, "mep", mep_in, channels)
        _unet_decoder_params(builder, "mep", channels)
        for level in range(config.depth - 2, -1, -1):
            builder.conv(f"mep.dec{level}.attn", ConvSpec(channels[level], channels[level], (1, 1, 1)))
        builder.conv("mep.head", ConvSpec(channels[0], 2, (1, 1, 1)))

        if config.has_ceu:
            deepest, width = channels[-1], config.ceu_channels
            builder.conv("ceu.conv0", ConvSpec(deepest, width, (3, 3, 3), 1, 1))
            builder.norm("ceu.gn0", width)
            builder.conv("ceu.conv1", ConvSpec(width, width, (3, 3, 3), 1, 1))
            builder.norm("ceu.gn1", width)
            builder.dense("ceu.fc0", width, config.ceu_hidden)
            builder.dense("ceu.fc1", config.ceu_hidden, 1)
        return cls(config, builder.params)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.params.items())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"State mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, param in self.params.items():
            if state[name].shape != param.shape:
                raise ValueError(f"Parameter '{name}': shape {state[name].shape}, expected {param.shape}")
            param.data[...] = state[name]

    # Building blocks

    def _conv(self, prefix: str, x: Tensor, kernel: int = 3) -> Tensor:
        weight = self.params[f"{prefix}.weight"]
        spec = ConvSpec(weight.shape[1], weight.shape[0], (kernel,) * 3, 1, kernel // 2)
        return conv3d(x, spec, weight, self.params[f"{prefix}.bias"])

    def _norm_relu(self, prefix: str, x: Tensor, groups: int) -> Tensor:
        return relu(group_norm(x, groups, self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"]))

    def _block(self, prefix: str, x: Tensor, groups: int) -> Tensor:
        for unit in range(2):
            x = self._norm_relu(f"{prefix}.gn{unit}", self._conv(f"{prefix}.conv{unit}", x), groups)
        return x

    def _up(self, prefix: str, x: Tensor) -> Tensor:
        weight = self.params[f"{prefix}.weight"]
        spec = ConvSpec(weight.shape[0], weight.shape[1], (2, 2, 2), 2, 0)
        return transposed_conv3d(x, spec, weight, self.params[f"{prefix}.bias"])

    # Forward passes

    def forward(self, image: Tensor, mask_onehot: Tensor) -> ForwardOutput:
        """
        Run the network on one crop.

        Args:
            image: [1, D, H, W] preprocessed intensities
            mask_onehot: [C, D, H, W] one-hot generated mask

        Returns:
            ForwardOutput: error_prob [2, D, H, W] (softmax, channel 0 = error),
            boundary_pred [1, D, H, W] (sigmoid) and cER (sigmoid scalar).
            The plain variant returns only error_prob; no_ceu returns no cER.
        """
        self._check_inputs(image, mask_onehot)
        if self.config.variant == "plain_concat_unet":
            return self._forward_plain(image, mask_onehot)
        groups = self.config.gn_groups
        depth = self.config.depth

        cbft_skips = []
        x = image
        for level in range(depth):
            if level:
                x = max_pool3d(x)
            x = self._block(f"cbft.enc{level}", x, groups)
            cbft_skips.append(x)

        mep_skips = []
        y = mask_onehot
        for level in range(depth):
            if level:
                y = max_pool3d(y)
            y = self._block(f"mep.enc{level}", concat_channels(y, cbft_skips[level]), groups)
            mep_skips.append(y)

        cer = ceu_forward(mep_skips[-1], self.params, groups) if self.config.has_ceu else None

        x = cbft_skips[-1]
        cbft_decoded = {}
        for level in range(depth - 2, -1, -1):
            x = self._up(f"cbft.dec{level}.up", x)
            x = self._block(f"cbft.dec{level}", concat_channels(x, cbft_skips[level]), groups)
            cbft_decoded[level] = x
        boundary_pred = sigmoid(self._conv("cbft.head", x, kernel=1))

        y = mep_skips[-1]
        for level in range(depth - 2, -1, -1):
            y = self._up(f"mep.dec{level}.up", y)
            y = self._block(f"mep.dec{level}", concat_channels(y, mep_skips[level]), groups)
            y = attention_fuse(
                y,
                cbft_decoded[level],
                self.params[f"mep.dec{level}.attn.weight"],
                self.params[f"mep.dec{level}.attn.bias"],
            )
        error_prob = softmax_channels(self._conv("mep.head", y, kernel=1))
        return ForwardOutput(error_prob, boundary_pred, cer)

    def _forward_plain(self, image: Tensor, mask_onehot: Tensor) -> ForwardOutput:
        groups = self.config.plain_gn_groups or self.config.gn_groups
        skips = []
        x = concat_channels(image, mask_onehot)
        for level in range(self.config.depth):
            if level:
                x = max_pool3d(x)
            x = self._block(f"plain.enc{level}", x, groups)
            skips.append(x)
        for level in range(self.config.depth - 2, -1, -1):
            x = self._up(f"plain.dec{level}.up", x)
            x = self._block(f"plain.dec{level}", concat_channels(x, skips[level]), groups)
        return ForwardOutput(softmax_channels(self._conv("plain.head", x, kernel=1)), None, None)

    def _check_inputs(self, image: Tensor, mask_onehot: Tensor) -> None:
        if image.data.ndim != 4 or image.shape[0] != 1:
            raise ShapeMismatchError(f"image must be [1, D, H, W], got {image.shape}")
        expected = (self.config.num_classes,) + image.shape[1:]
        if mask_onehot.shape != expected:
            raise ShapeMismatchError(f"mask must be {expected}, got {mask_onehot.shape}")
        multiple = 2 ** self.config.depth
        if any(n % multiple for n in image.shape[1:]):
            raise ShapeMismatchError(
                f"spatial extents {image.shape[1:]} must be multiples of 2^depth = {multiple}"
            )


def attention_fuse(f_mep: Tensor, f_cbft: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """
    Boundary-aware attention: F_out = F_mep + F_mep * sigmoid(conv1x1x1(F_cbft)).

    Args:
        f_mep: MEP decoder features [C_mep, D, H, W]
        f_cbft: CBFT decoder features [C_cbft, D, H, W]
        weight: 1x1x1 kernel [C_mep, C_cbft, 1, 1, 1]
        bias: [C_mep]
    """
    if f_mep.shape[1:] != f_cbft.shape[1:]:
        raise ShapeMismatchError(f"attention_fuse: spatial mismatch {f_mep.shape} vs {f_cbft.shape}")
    spec = ConvSpec(f_cbft.shape[0], f_mep.shape[0], (1, 1, 1))
    gate = sigmoid(conv3d(f_cbft, spec, weight, bias))
    return add(f_mep, mul(f_mep, gate))


def ceu_forward(features: Tensor, params: Dict[str, Tensor], groups: int) -> Tensor:
    """
    Context encoding unit on the deepest MEP encoder features.

    conv3 + GN + ReLU, 2x max-pool, conv3 + GN + ReLU, global average pool,
    linear + ReLU, linear + sigmoid. Returns the predicted error rate as a
    scalar tensor.
    """
    x = features
    for unit in range(2):
        weight = params[f"ceu.conv{unit}.weight"]
        spec = ConvSpec(weight.shape[1], weight.shape[0], (3, 3, 3), 1, 1)
        x = conv3d(x, spec, weight, params[f"ceu.conv{unit}.bias"])
        x = relu(group_norm(x, groups, params[f"ceu.gn{unit}.gamma"], params[f"ceu.gn{unit}.beta"]))
        if unit == 0:
            x = max_pool3d(x)
    pooled = global_avg_pool(x)
    hidden = relu(linear(pooled, params["ceu.fc0.weight"], params["ceu.fc0.bias"]))
    return reshape(sigmoid(linear(hidden, params["ceu.fc1.weight"], params["ceu.fc1.bias"])), ())


def predict_volume(model: AepNetModel, image: np.ndarray, mask_onehot: np.ndarray) -> ForwardOutput:
    """
    Whole-volume inference without recording a graph.

    Volumes are zero-padded up to a multiple of 2^depth and the voxelwise
    outputs cropped back to the original extents.
    """
    multiple = 2 ** model.config.depth
    padded_image, extents = pad_to_multiple(np.asarray(image, dtype=np.float64)[None], multiple)
    padded_mask, _ = pad_to_multiple(np.asarray(mask_onehot, dtype=np.float64), multiple)
    if padded_mask.shape[1:] != extents:
        # padding voxels are labelled background
        pad_region = np.ones(padded_mask.shape[1:], dtype=bool)
        pad_region[tuple(slice(0, n) for n in extents)] = False
        padded_mask[0][pad_region] = 1.0
    out = model.forward(Tensor(padded_image), Tensor(padded_mask))
    window = (slice(None),) + tuple(slice(0, n) for n in extents)
    error_prob = Tensor(out.error_prob.data[window])
    boundary = Tensor(out.boundary_pred.data[window]) if out.boundary_pred is not None else None
    return ForwardOutput(error_prob, boundary, out.cer)


def budget_deviation(config: AepNetConfig, seed: int = 0) -> float:
    """Relative parameter-count deviation of a variant from the full network."""
    full = AepNetModel.build(replace(config, variant="full"), seed).parameter_count()
    mine = AepNetModel.build(config, seed).parameter_count()
    return abs(mine - full) / full
