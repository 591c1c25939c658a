"""
Differentiable 3D network primitives on [C, D, H, W] tensors.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..config.settings import GROUP_NORM_EPS
from .autodiff import ShapeMismatchError, Tensor, record

Kernel = Tuple[int, int, int]


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract of a 3D (transposed) convolution."""

    in_channels: int
    out_channels: int
    kernel: Kernel = (3, 3, 3)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"Channel counts must be positive: {self}")
        if len(self.kernel) != 3 or min(self.kernel) < 1:
            raise ValueError(f"Kernel must be three positive extents: {self.kernel}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"Invalid stride/padding: {self}")

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        return (self.out_channels, self.in_channels) + tuple(self.kernel)

    @property
    def transposed_weight_shape(self) -> Tuple[int, ...]:
        return (self.in_channels, self.out_channels) + tuple(self.kernel)

    def output_extents(self, extents: Tuple[int, ...]) -> Tuple[int, ...]:
        out = tuple(
            (n + 2 * self.padding - k) // self.stride + 1 for n, k in zip(extents, self.kernel)
        )
        if any(n + 2 * self.padding < k for n, k in zip(extents, self.kernel)) or min(out) < 1:
            raise ShapeMismatchError(f"Convolution output extent < 1 for input {extents} with {self}")
        return out

    def transposed_output_extents(self, extents: Tuple[int, ...]) -> Tuple[int, ...]:
        return tuple(self.stride * (n - 1) + k for n, k in zip(extents, self.kernel))


def _check_volume(name: str, x: Tensor) -> None:
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"{name} expects [C, D, H, W], got shape {x.shape}")


def conv3d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Zero-padded 3D cross-correlation.

    Args:
        x: Input [C_in, D, H, W]
        spec: Convolution shape contract
        weight: Kernel [C_out, C_in, kd, kh, kw]
        bias: Optional [C_out]

    Returns:
        Tensor: [C_out, D', H', W']
    """
    _check_volume("conv3d", x)
    if x.shape[0] != spec.in_channels:
        raise ShapeMismatchError(f"conv3d: input has {x.shape[0]} channels, spec expects {spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise ShapeMismatchError(f"conv3d: weight shape {weight.shape}, expected {spec.weight_shape}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeMismatchError(f"conv3d: bias shape {bias.shape}, expected {(spec.out_channels,)}")
    out_extents = spec.output_extents(x.shape[1:])
    p, s = spec.padding, spec.stride
    kd, kh, kw = spec.kernel
    padded = np.pad(x.data, ((0, 0), (p, p), (p, p), (p, p))) if p else x.data
    windows = sliding_window_view(padded, (kd, kh, kw), axis=(1, 2, 3))[:, ::s, ::s, ::s]
    w_data = weight.data
    out = np.tensordot(w_data, windows, axes=([1, 2, 3, 4], [0, 4, 5, 6]))
    if bias is not None:
        out = out + bias.data[:, None, None, None]

    in_shape = x.shape
    padded_shape = padded.shape
    od, oh, ow = out_extents

    def _backward(g: np.ndarray):
        grad_w = np.tensordot(g, windows, axes=([1, 2, 3], [1, 2, 3]))
        cols = np.tensordot(w_data, g, axes=([0], [0]))
        grad_padded = np.zeros(padded_shape)
        for i in range(kd):
            for j in range(kh):
                for k in range(kw):
                    grad_padded[
                        :,
                        i : i + s * (od - 1) + 1 : s,
                        j : j + s * (oh - 1) + 1 : s,
                        k : k + s * (ow - 1) + 1 : s,
                    ] += cols[:, i, j, k]
        grad_x = grad_padded[:, p : p + in_shape[1], p : p + in_shape[2], p : p + in_shape[3]]
        grads = [np.ascontiguousarray(grad_x), grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record("conv3d", out, parents, _backward)


def transposed_conv3d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    3D transposed convolution (scatter-add), no padding.

    The weight layout is [C_in, C_out, kd, kh, kw], so the same array serves a
    forward ``conv3d`` mapping C_out -> C_in; the two are adjoint.
    """
    _check_volume("transposed_conv3d", x)
    if spec.padding:
        raise ValueError("transposed_conv3d does not support padding")
    if x.shape[0] != spec.in_channels:
        raise ShapeMismatchError(
            f"transposed_conv3d: input has {x.shape[0]} channels, spec expects {spec.in_channels}"
        )
    if weight.shape != spec.transposed_weight_shape:
        raise ShapeMismatchError(
            f"transposed_conv3d: weight shape {weight.shape}, expected {spec.transposed_weight_shape}"
        )
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeMismatchError(f"transposed_conv3d: bias shape {bias.shape}, expected {(spec.out_channels,)}")
    s = spec.stride
    kd, kh, kw = spec.kernel
    _, d, h, w = x.shape
    out_extents = spec.transposed_output_extents((d, h, w))
    w_data, x_data = weight.data, x.data

    cols = np.tensordot(w_data, x_data, axes=([0], [0]))
    out = np.zeros((spec.out_channels,) + out_extents)
    for i in range(kd):
        for j in range(kh):
            for k in range(kw):
                out[:, i : i + s * (d - 1) + 1 : s, j : j + s * (h - 1) + 1 : s, k : k + s * (w - 1) + 1 : s] += cols[
                    :, i, j, k
                ]
    if bias is not None:
        out += bias.data[:, None, None, None]

    def _backward(g: np.ndarray):
        grad_x = np.zeros(x_data.shape)
        grad_w = np.zeros(w_data.shape)
        for i in range(kd):
            for j in range(kh):
                for k in range(kw):
                    g_slice = g[:, i : i + s * (d - 1) + 1 : s, j : j + s * (h - 1) + 1 : s, k : k + s * (w - 1) + 1 : s]
                    grad_x += np.tensordot(w_data[:, :, i, j, k], g_slice, axes=([1], [0]))
                    grad_w[:, :, i, j, k] = np.tensordot(x_data, g_slice, axes=([1, 2, 3], [1, 2, 3]))
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record("transposed_conv3d", out, parents, _backward)


def max_pool3d(x: Tensor) -> Tensor:
    """
    2x2x2 max pooling with stride 2.

    Ties route the gradient to the first voxel of the block in row-major order.
    """
    _check_volume("max_pool3d", x)
    c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise ShapeMismatchError(f"max_pool3d needs even spatial extents, got {x.shape[1:]}")
    blocks = (
        x.data.reshape(c, d // 2, 2, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 3, 5, 2, 4, 6)
        .reshape(c, d // 2, h // 2, w // 2, 8)
    )
    winner = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, winner[..., None], axis=-1)[..., 0]

    def _backward(g: np.ndarray):
        routed = np.zeros(blocks.shape)
        np.put_along_axis(routed, winner[..., None], g[..., None], axis=-1)
        grad = (
            routed.reshape(c, d // 2, h // 2, w // 2, 2, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3, 6)
            .reshape(c, d, h, w)
        )
        return (grad,)

    return record("max_pool3d", out, (x,), _backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, [C, D, H, W] -> [C]."""
    _check_volume("global_avg_pool", x)
    in_shape = x.shape
    count = in_shape[1] * in_shape[2] * in_shape[3]
    out = x.data.reshape(in_shape[0], -1).sum(axis=1) / count

    def _backward(g: np.ndarray):
        return (np.broadcast_to((g / count)[:, None, None, None], in_shape).copy(),)

    return record("global_avg_pool", out, (x,), _backward)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = GROUP_NORM_EPS) -> Tensor:
    """
    Group normalization with statistics over (channels-in-group x spatial).

    Args:
        x: Input [C, D, H, W]
        groups: Number of channel groups G; C must be divisible by G
        gamma: Per-channel scale [C]
        beta: Per-channel shift [C]
        eps: Variance floor

    Returns:
        Tensor: Normalized tensor, same shape as x
    """
    _check_volume("group_norm", x)
    c = x.shape[0]
    if groups < 1 or c % groups:
        raise ShapeMismatchError(f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatchError(f"group_norm: gamma {gamma.shape} / beta {beta.shape}, expected {(c,)}")
    in_shape = x.shape
    grouped = x.data.reshape(groups, -1)
    n = grouped.shape[1]
    mu = grouped.mean(axis=1, keepdims=True)
    centered = grouped - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (centered * inv_std).reshape(in_shape)
    g_data = gamma.data[:, None, None, None]
    out = g_data * x_hat + beta.data[:, None, None, None]

    def _backward(g: np.ndarray):
        grad_gamma = (g * x_hat).sum(axis=(1, 2, 3))
        grad_beta = g.sum(axis=(1, 2, 3))
        d_hat = (g * g_data).reshape(groups, n)
        x_hat_g = x_hat.reshape(groups, n)
        grad_x = (
            inv_std
            / n
            * (n * d_hat - d_hat.sum(axis=1, keepdims=True) - x_hat_g * (d_hat * x_hat_g).sum(axis=1, keepdims=True))
        )
        return grad_x.reshape(in_shape), grad_gamma, grad_beta

    return record("group_norm", out, (x, gamma, beta), _backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack [C1, D, H, W] and [C2, D, H, W] along channels, a first."""
    _check_volume("concat_channels", a)
    _check_volume("concat_channels", b)
    if a.shape[1:] != b.shape[1:]:
        raise ShapeMismatchError(f"concat_channels: spatial mismatch {a.shape} vs {b.shape}")
    split = a.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)
    return record("concat_channels", out, (a, b), lambda g: (g[:split].copy(), g[split:].copy()))


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over the channel axis of [C, D, H, W]."""
    _check_volume("softmax_channels", x)
    shifted = x.data - x.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=0, keepdims=True)

    def _backward(g: np.ndarray):
        return (probs * (g - (g * probs).sum(axis=0, keepdims=True)),)

    return record("softmax_channels", probs, (x,), _backward)


def pad_to_multiple(volume: np.ndarray, multiple: int) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Zero-pad the trailing spatial axes of [C, D, H, W] up to a multiple."""
    extents = volume.shape[1:]
    target = tuple(-(-n // multiple) * multiple for n in extents)
    padding = ((0, 0),) + tuple((0, t - n) for n, t in zip(extents, target))
    return np.pad(volume, padding), extents
