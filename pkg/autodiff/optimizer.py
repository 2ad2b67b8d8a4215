"""
Adaptive-moment (Adam) optimizer over named parameter tensors.
"""
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from autodiff.tensor import Tensor
from config.errors import RangeError, ShapeError
from config.neti_config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS


@dataclass
class OptimizerState:
    """First and second moments per parameter plus the step counter."""
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], **kwargs) -> "OptimizerState":
        return cls(
            first_moment={name: np.zeros_like(p.data) for name, p in params.items()},
            second_moment={name: np.zeros_like(p.data) for name, p in params.items()},
            **kwargs,
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Optional[Mapping[str, np.ndarray]],
    state: OptimizerState,
    lr: float,
) -> Tuple[Mapping[str, Tensor], OptimizerState]:
    """Apply one bias-corrected Adam update in place and return params and state.

    ``grads`` defaults to each parameter's accumulated ``grad``; a parameter
    without a gradient is treated as having a zero gradient.
    """
    if lr < 0:
        raise RangeError(f"learning rate must be >= 0, got {lr}")
    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if name not in state.first_moment:
            state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        m, v = state.first_moment[name], state.second_moment[name]
        if m.shape != p.shape:
            raise ShapeError(f"moment for {name} has shape {m.shape}, parameter has {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        p.data -= update.astype(p.dtype, copy=False)
    return params, state


class Adam:
    """Thin stateful wrapper used by the training loops."""

    def __init__(self, params: Mapping[str, Tensor], lr: float):
        self.params = dict(params)
        self.lr = lr
        self.state = OptimizerState.for_params(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, None, self.state, self.lr)
