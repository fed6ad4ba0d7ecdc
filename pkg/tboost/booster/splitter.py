"""
Splitter: predicts, for every boundary between consecutive frames of a
tracklet window, the probability of an identity switch (m_hat) and the width
of the Gaussian used to soften the switch label (sigma_hat).

Trunk: pointwise input projection K -> C, then `num_blocks` residual blocks
of (dilated conv k3 -> pointwise conv -> ReLU), dilations cycling through
`dilations`. Boundary features are the mean of the trunk features at frames
t and t+1; two fully connected heads map them to m_hat (sigmoid) and
sigma_hat (softplus).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal, Optional, Tuple, Union

import numpy as np

from . import rng as rng_streams
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, ShapeError
from .nn import Params, conv1d_dilated, pointwise, uniform_param, zeros_param
from .tensor import (
    Tensor,
    add,
    as_tensor,
    clamp,
    div,
    exp,
    mul,
    relu,
    sigmoid,
    softplus,
    square,
    sub,
    sum_,
    take,
)
from .tracklet import SwitchMask

Smoothing = Literal["adaptive", "fixed", "hard"]
SMOOTHING_KINDS = ("adaptive", "fixed", "hard")


@dataclass(frozen=True)
class SplitterConfig:
    feature_dim: int = 36
    channels: int = 64
    num_blocks: int = 24
    window: int = 65
    dilations: Tuple[int, ...] = (1, 2, 4, 8)
    sigma_lo: float = 0.001
    sigma_hi: float = 10.0
    smoothing: Smoothing = "adaptive"
    fixed_sigma: float = 2.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.feature_dim < 5:
            raise ConfigError(f"splitter.feature_dim must be >= 5, got {self.feature_dim}")
        if self.channels < 1:
            raise ConfigError(f"splitter.channels must be >= 1, got {self.channels}")
        if self.num_blocks < 1:
            raise ConfigError(f"splitter.num_blocks must be >= 1, got {self.num_blocks}")
        if self.window < 3:
            raise ConfigError(f"splitter.window must be >= 3, got {self.window}")
        if not self.dilations or min(self.dilations) < 1:
            raise ConfigError(f"splitter.dilations must be positive, got {self.dilations}")
        if self.sigma_lo <= 0:
            raise ConfigError(f"splitter.sigma_lo must be > 0, got {self.sigma_lo}")
        if self.sigma_hi <= self.sigma_lo:
            raise ConfigError("splitter.sigma_hi must exceed splitter.sigma_lo")
        if self.smoothing not in SMOOTHING_KINDS:
            raise ConfigError(f"splitter.smoothing must be one of {SMOOTHING_KINDS}")
        if self.fixed_sigma <= 0:
            raise ConfigError(f"splitter.fixed_sigma must be > 0, got {self.fixed_sigma}")

    def dilation(self, block: int) -> int:
        return self.dilations[block % len(self.dilations)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


def receptive_field(cfg: SplitterConfig) -> int:
    """Frames seen by one output frame: 1 + 2 * sum of block dilations."""
    return 1 + 2 * sum(cfg.dilation(i) for i in range(cfg.num_blocks))


def init_splitter(cfg: SplitterConfig, seed: int) -> Params:
    rng = rng_streams.stream(seed, "init", 1)
    c, k = cfg.channels, cfg.feature_dim
    params: Params = {
        "input.w": uniform_param(rng, (c, k), fan_in=k),
        "input.b": zeros_param((c,)),
    }
    for i in range(cfg.num_blocks):
        params[f"blocks.{i}.dconv.w"] = uniform_param(rng, (c, c, 3), fan_in=3 * c)
        params[f"blocks.{i}.dconv.b"] = zeros_param((c,))
        params[f"blocks.{i}.pw.w"] = uniform_param(rng, (c, c), fan_in=c)
        params[f"blocks.{i}.pw.b"] = zeros_param((c,))
    for head in ("head_mask", "head_sigma"):
        params[f"{head}.w"] = uniform_param(rng, (1, c), fan_in=c)
        params[f"{head}.b"] = zeros_param((1,))
    return params


@dataclass(frozen=True, eq=False)
class SplitterOutput:
    m_hat: Tensor  # (T-1,) or (B, T-1), in (0, 1)
    sigma_hat: Tensor  # same shape, > 0

    def mask(self, row: int = 0) -> SwitchMask:
        values = self.m_hat.data if self.m_hat.ndim == 1 else self.m_hat.data[row]
        return SwitchMask(np.clip(values.astype(np.float64), 0.0, 1.0), kind="predicted")


def splitter_forward(x: Union[Tensor, np.ndarray], cfg: SplitterConfig, params: Params) -> SplitterOutput:
    """x is (K, T) or (B, K, T); outputs have T-1 entries per window."""
    x = as_tensor(x, like=params["input.w"])
    if x.ndim not in (2, 3) or x.shape[-2] != cfg.feature_dim:
        raise ShapeError(f"splitter expects (K={cfg.feature_dim}, T) input, got {x.shape}")
    if x.shape[-1] < 2:
        raise ShapeError("splitter needs at least 2 frames")

    h = pointwise(x, params["input.w"], params["input.b"])
    for i in range(cfg.num_blocks):
        p = f"blocks.{i}"
        y = conv1d_dilated(h, params[f"{p}.dconv.w"], cfg.dilation(i))
        y = add(y, params[f"{p}.dconv.b"].reshape(cfg.channels, 1))
        y = relu(pointwise(y, params[f"{p}.pw.w"], params[f"{p}.pw.b"]))
        h = add(h, y)

    lead = (slice(None),) * (h.ndim - 1)
    boundary = mul(add(take(h, lead + (slice(None, -1),)), take(h, lead + (slice(1, None),))), 0.5)

    out_shape = boundary.shape[:-2] + (boundary.shape[-1],)
    m_logit = pointwise(boundary, params["head_mask.w"], params["head_mask.b"]).reshape(out_shape)
    s_raw = pointwise(boundary, params["head_sigma.w"], params["head_sigma.b"]).reshape(out_shape)
    return SplitterOutput(m_hat=sigmoid(m_logit), sigma_hat=softplus(s_raw))


# ----------------------------
# Labels and losses
# ----------------------------

def _distance_sq(n: int) -> np.ndarray:
    idx = np.arange(n, dtype=np.float64)
    return (idx[None, :] - idx[:, None]) ** 2  # [t, tau] = (tau - t)^2


def smooth_labels(m_star: np.ndarray, sigma_tilde: Union[Tensor, np.ndarray]) -> Tensor:
    """
    label[t] = min(sum_tau m*[tau] * exp(-(tau - t)^2 / sigma[tau]^2), 1)

    m_star is (N,) or (B, N); sigma_tilde has the same shape and is used as
    given (clamp it first). Differentiable in sigma_tilde.
    """
    m_star = np.asarray(m_star, dtype=np.float64)
    sigma = as_tensor(sigma_tilde)
    if sigma.shape != m_star.shape:
        raise ShapeError(f"sigma {sigma.shape} does not match mask {m_star.shape}")
    n = m_star.shape[-1]
    lead = m_star.shape[:-1]
    d2 = _distance_sq(n).astype(sigma.dtype)
    sig2 = square(sigma.reshape(lead + (1, n)))
    kernel = exp(div(-d2, sig2))
    weighted = mul(kernel, m_star.reshape(lead + (1, n)).astype(sigma.dtype))
    return clamp(sum_(weighted, axis=-1), hi=1.0)


def _masked_sum_sq(residual: Tensor, valid: Optional[np.ndarray]) -> Tensor:
    sq = square(residual)
    if valid is not None:
        sq = mul(sq, np.asarray(valid, dtype=sq.dtype))
    return sum_(sq)


def _check_lengths(out: SplitterOutput, m_star: np.ndarray) -> np.ndarray:
    m_star = np.asarray(m_star, dtype=np.float64)
    if m_star.shape != out.m_hat.shape:
        raise ShapeError(f"mask {m_star.shape} does not match prediction {out.m_hat.shape}")
    return m_star


def splitter_loss(
    out: SplitterOutput,
    m_star: np.ndarray,
    valid: Optional[np.ndarray] = None,
    sigma_lo: float = 0.001,
    sigma_hi: float = 10.0,
) -> Tensor:
    """Adaptive smoothing loss: sigma_hat clamped to [lo, hi], labels smoothed with it, summed squared error."""
    m_star = _check_lengths(out, m_star)
    sigma_tilde = clamp(out.sigma_hat, lo=sigma_lo, hi=sigma_hi)
    labels = smooth_labels(m_star, sigma_tilde)
    return _masked_sum_sq(sub(out.m_hat, labels), valid)


def fixed_smooth_loss(
    out: SplitterOutput,
    m_star: np.ndarray,
    sigma: float,
    valid: Optional[np.ndarray] = None,
) -> Tensor:
    m_star = _check_lengths(out, m_star)
    labels = smooth_labels(m_star, np.full(m_star.shape, sigma, dtype=out.m_hat.dtype))
    return _masked_sum_sq(sub(out.m_hat, labels), valid)


def baseline_hard_loss(out: SplitterOutput, m_star: np.ndarray, valid: Optional[np.ndarray] = None) -> Tensor:
    """Plain squared error against the binary mask."""
    m_star = _check_lengths(out, m_star)
    return _masked_sum_sq(sub(out.m_hat, m_star.astype(out.m_hat.dtype)), valid)


def loss_for(
    cfg: SplitterConfig,
    out: SplitterOutput,
    m_star: np.ndarray,
    valid: Optional[np.ndarray] = None,
) -> Tensor:
    if cfg.smoothing == "adaptive":
        return splitter_loss(out, m_star, valid, cfg.sigma_lo, cfg.sigma_hi)
    if cfg.smoothing == "fixed":
        return fixed_smooth_loss(out, m_star, cfg.fixed_sigma, valid)
    return baseline_hard_loss(out, m_star, valid)


@dataclass(frozen=True, eq=False)
class SplitterModel:
    cfg: SplitterConfig
    params: Params

    def save(self, path: Union[str, Path], **meta) -> None:
        save_checkpoint(path, self.params, {"kind": "splitter", "config": self.cfg.to_dict(), **meta})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SplitterModel":
        params, meta = load_checkpoint(path)
        if meta.get("kind") != "splitter":
            raise DataError(f"checkpoint holds a {meta.get('kind')!r} model, not a splitter", path=str(path))
        return cls(cfg=SplitterConfig(**meta["config"]), params=params)
