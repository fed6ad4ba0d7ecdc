from __future__ import annotations

from typing import Callable, Dict, Sequence, Union

import numpy as np

from .tensor import Tensor

ParamsArg = Union[Dict[str, Tensor], Sequence[Tensor]]

REL_FLOOR = 1e-6


def _as_list(params: ParamsArg):
    return list(params.values()) if isinstance(params, dict) else list(params)


def grad_check(f: Callable[[], Tensor], params: ParamsArg, eps: float = 1e-4) -> float:
    """
    Compare autograd gradients of the scalar f() against central finite
    differences (f(x + eps) - f(x - eps)) / (2 eps), element by element.

    `f` closes over `params` and must rebuild its graph on every call. Pass
    float64 parameters (see nn.cast_params) or the differences drown in
    float32 rounding. Returns the largest relative error
    |auto - numeric| / max(|auto|, |numeric|, 1e-6).
    """
    tensors = _as_list(params)
    for p in tensors:
        p.data = np.ascontiguousarray(p.data)
        p.grad = None
        p.requires_grad = True

    out = f()
    out.backward()
    auto = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in tensors]

    worst = 0.0
    for p, g in zip(tensors, auto):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f().item()
            flat[i] = orig - eps
            f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(gflat[i]), abs(numeric), REL_FLOOR)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
