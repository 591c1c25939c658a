"""
Adam with the poly learning-rate schedule.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from ..config.settings import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, LR0, POLY_POWER
from ..core.autodiff import ShapeMismatchError, Tensor


def poly_lr(iteration: int, max_iter: int, lr0: float = LR0, power: float = POLY_POWER) -> float:
    """lr0 * (1 - iteration / max_iter) ** power."""
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside 0..{max_iter}")
    return float(lr0 * (1.0 - iteration / max_iter) ** power)


@dataclass
class AdamState:
    """Per-parameter moment estimates keyed by parameter name."""

    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, name: str, shape) -> None:
        if name not in self.m:
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)
        elif self.m[name].shape != tuple(shape):
            raise ShapeMismatchError(f"Adam moments for '{name}' have shape {self.m[name].shape}, parameter {tuple(shape)}")


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> AdamState:
    """
    One bias-corrected Adam update, in place on the parameter data.

    Args:
        params: Named parameter tensors
        grads: Gradient array per parameter name
        state: Moment estimates, updated in place
        lr: Learning rate of this step

    Returns:
        AdamState: The updated state
    """
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, param in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != param.shape:
            raise ShapeMismatchError(f"Gradient for '{name}' has shape {grad.shape}, parameter {param.shape}")
        state.ensure(name, param.shape)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        param.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state
