from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class OptimizerState:
    base_lr: float
    horizon: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.horizon < 0:
            raise ConfigError(f"horizon must be non-negative, got {self.horizon}")


def cosine_lr(base_lr: float, t: int, horizon: int) -> float:
    """lr(t) = base * 0.5 * (1 + cos(pi * t / horizon))."""
    if horizon <= 0:
        return 0.0
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t / horizon))


def adam_cosine_step(
    params: Dict[str, Tensor],
    grads: Optional[Dict[str, np.ndarray]],
    state: OptimizerState,
) -> float:
    """
    One Adam update with a cosine-annealed learning rate. Gradients come from
    `grads` when given, else from each parameter's `.grad`. Parameters are
    updated in place; returns the lr used.
    """
    if state.step >= state.horizon:
        raise ValueError(f"optimizer step {state.step} is past the horizon {state.horizon}")

    lr = cosine_lr(state.base_lr, state.step, state.horizon)
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t

    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        if m.shape != p.shape:
            raise ShapeError(f"moment buffer for {name} has shape {m.shape}, parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= update.astype(p.dtype)

    state.step += 1
    return lr


def zero_grads(params: Dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
