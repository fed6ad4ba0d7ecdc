from __future__ import annotations

import math
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import DegenerateEmbeddingError, ShapeError
from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    _result,
    add,
    matmul,
    mean,
    mul,
    sqrt,
    square,
    sub,
    sum_,
    take,
)

Params = Dict[str, Tensor]

KERNEL_SIZE = 3


# ----------------------------
# Initialization
# ----------------------------

def uniform_param(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> Tensor:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / math.sqrt(fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(DEFAULT_DTYPE)
    return Tensor(data, requires_grad=True)


def zeros_param(shape: Tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DEFAULT_DTYPE), requires_grad=True)


def ones_param(shape: Tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape, dtype=DEFAULT_DTYPE), requires_grad=True)


def count_params(params: Params, prefix: str = "") -> int:
    return sum(p.size for name, p in params.items() if name.startswith(prefix))


def cast_params(params: Params, dtype: np.dtype) -> Params:
    """Fresh leaf copies in another dtype (grad-checking runs in float64)."""
    return {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in params.items()}


# ----------------------------
# Convolution
# ----------------------------

def conv1d_dilated(x: Tensor, w: Tensor, dilation: int) -> Tensor:
    """
    Dilated temporal convolution, kernel size 3, zero padding of `dilation` on
    both sides so the output keeps the input length.

    x is (C_in, T) or (B, C_in, T); w is (C_out, C_in, 3).
    y[c, t] = sum_{i, j} w[c, i, j] * x_pad[i, t + j * dilation]
    """
    if not isinstance(dilation, (int, np.integer)) or dilation < 1:
        raise ShapeError(f"dilation must be a positive integer, got {dilation!r}")
    if w.ndim != 3 or w.shape[2] != KERNEL_SIZE:
        raise ShapeError(f"kernel must be (C_out, C_in, 3), got {w.shape}")
    if x.ndim not in (2, 3):
        raise ShapeError(f"input must be (C_in, T) or (B, C_in, T), got {x.shape}")
    batched = x.ndim == 3
    xb = x.data if batched else x.data[None]
    c_out, c_in, _ = w.shape
    if xb.shape[1] != c_in:
        raise ShapeError(f"input has {xb.shape[1]} channels, kernel expects {c_in}")

    d = int(dilation)
    b, _, t = xb.shape
    xp = np.pad(xb, ((0, 0), (0, 0), (d, d)))
    cols = np.stack([xp[:, :, j * d: j * d + t] for j in range(KERNEL_SIZE)], axis=2)
    cols2 = cols.reshape(b, c_in * KERNEL_SIZE, t)
    w2 = w.data.reshape(c_out, c_in * KERNEL_SIZE)
    y = np.matmul(w2, cols2)

    def backward(g: np.ndarray):
        gb = g if batched else g[None]
        gw = np.matmul(gb, np.swapaxes(cols2, 1, 2)).sum(axis=0).reshape(w.shape)
        gcols = np.matmul(w2.T, gb).reshape(b, c_in, KERNEL_SIZE, t)
        gxp = np.zeros_like(xp)
        for j in range(KERNEL_SIZE):
            gxp[:, :, j * d: j * d + t] += gcols[:, :, j, :]
        gx = gxp[:, :, d: d + t]
        return (gx if batched else gx[0]), gw.astype(w.dtype)

    return _result(y if batched else y[0], (x, w), backward, "conv1d_dilated")


def pointwise(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Kernel-size-1 convolution: (C_out, C_in) applied to (..., C_in, T)."""
    y = matmul(w, x)
    if b is not None:
        y = add(y, b.reshape(b.shape[0], 1))
    return y


# ----------------------------
# Attention helpers
# ----------------------------

def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by subtracting the row max."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = (e / e.sum(axis=-1, keepdims=True, dtype=np.float64)).astype(a.dtype)

    def backward(g: np.ndarray):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _result(out, (a,), backward, "softmax_rows")


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True, dtype=np.float64))
    out = (shifted - lse).astype(a.dtype)
    probs = np.exp(out)

    def backward(g: np.ndarray):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _result(out, (a,), backward, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = mean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = mean(square(xc), axis=-1, keepdims=True)
    return add(mul(xc / sqrt(add(var, eps)), gamma), beta)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ----------------------------
# Embedding geometry and losses
# ----------------------------

NORM_FLOOR = 1e-12


def l2_normalize(x: Tensor) -> Tensor:
    """Normalize rows (last axis) to unit length; a zero row is an error."""
    sq = sum_(square(x), axis=-1, keepdims=True)
    if (sq.data <= NORM_FLOOR).any():
        raise DegenerateEmbeddingError("pooled feature vector has zero norm")
    return x / sqrt(sq)


def pairwise_distances(h: Tensor) -> Tensor:
    """Euclidean distances between rows of h (N, D) -> (N, N)."""
    n, d = h.shape
    diff = sub(h.reshape(n, 1, d), h.reshape(1, n, d))
    return sqrt(sum_(square(diff), axis=-1), grad_floor=NORM_FLOOR)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Summed negative log-likelihood of integer labels under row-wise softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"logits {logits.shape} do not match {labels.shape[0]} labels")
    logp = log_softmax(logits)
    picked = take(logp, (np.arange(labels.shape[0]), labels))
    return mul(sum_(picked), -1.0)
