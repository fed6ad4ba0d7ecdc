"""
Connector: a multi-head self-attention encoder that maps a tracklet (K x T)
to a unit-length embedding h. Tracklets of the same object should land close
together, tracklets of different objects far apart.

    input projection K -> D
    `layers` x [ MSA -> residual + layer norm -> feed-forward (D -> 2D -> D, ReLU) -> residual + layer norm ]
    h = l2-normalize(mean over time of z_L)
    logits = h @ W_c       (classification head, training only)

No positional encoding: the embedding does not depend on frame order.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from . import rng as rng_streams
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, ShapeError
from .nn import (
    Params,
    count_params,
    cross_entropy,
    l2_normalize,
    layer_norm,
    linear,
    ones_param,
    pairwise_distances,
    softmax_rows,
    uniform_param,
    zeros_param,
)
from .tensor import Tensor, add, as_tensor, matmul, mean, mul, no_grad, relu, sub, sum_, swap_last, take, transpose
from .tracklet import window_starts


@dataclass(frozen=True)
class ConnectorConfig:
    feature_dim: int = 36
    layers: int = 6
    heads: int = 4
    model_dim: int = 64
    ff_mult: int = 2
    margin: float = 0.2
    triplet_weight: float = 0.5
    num_classes: int = 0  # set from the training identities
    window: int = 65

    def __post_init__(self) -> None:
        if self.feature_dim < 5:
            raise ConfigError(f"connector.feature_dim must be >= 5, got {self.feature_dim}")
        if self.layers < 1:
            raise ConfigError(f"connector.layers must be >= 1, got {self.layers}")
        if self.heads < 1 or self.model_dim % self.heads != 0:
            raise ConfigError(f"connector.model_dim {self.model_dim} must be divisible by heads {self.heads}")
        if self.margin <= 0:
            raise ConfigError(f"connector.margin must be > 0, got {self.margin}")
        if self.triplet_weight < 0:
            raise ConfigError(f"connector.triplet_weight must be >= 0, got {self.triplet_weight}")
        if self.num_classes < 0:
            raise ConfigError(f"connector.num_classes must be >= 0, got {self.num_classes}")
        if self.window < 2:
            raise ConfigError(f"connector.window must be >= 2, got {self.window}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class TrackletEmbedding:
    h: np.ndarray  # (D,), unit length

    def distance(self, other: "TrackletEmbedding") -> float:
        return float(np.linalg.norm(self.h.astype(np.float64) - other.h.astype(np.float64)))


def init_connector(cfg: ConnectorConfig, seed: int) -> Params:
    rng = rng_streams.stream(seed, "init", 2)
    k, d, dh, hidden = cfg.feature_dim, cfg.model_dim, cfg.head_dim, cfg.ff_mult * cfg.model_dim
    params: Params = {
        "input.w": uniform_param(rng, (k, d), fan_in=k),
        "input.b": zeros_param((d,)),
    }
    for i in range(cfg.layers):
        p = f"layers.{i}"
        params[f"{p}.attn.w"] = uniform_param(rng, (cfg.heads, d, 3 * dh), fan_in=d)
        params[f"{p}.attn.wo"] = uniform_param(rng, (cfg.heads * dh, d), fan_in=cfg.heads * dh)
        params[f"{p}.ln1.g"] = ones_param((d,))
        params[f"{p}.ln1.b"] = zeros_param((d,))
        params[f"{p}.ff.w1"] = uniform_param(rng, (d, hidden), fan_in=d)
        params[f"{p}.ff.b1"] = zeros_param((hidden,))
        params[f"{p}.ff.w2"] = uniform_param(rng, (hidden, d), fan_in=hidden)
        params[f"{p}.ff.b2"] = zeros_param((d,))
        params[f"{p}.ln2.g"] = ones_param((d,))
        params[f"{p}.ln2.b"] = zeros_param((d,))
    if cfg.num_classes > 0:
        params["classifier.w"] = uniform_param(rng, (d, cfg.num_classes), fan_in=d)
    return params


def msa_param_count(params: Params, layer: int = 0) -> int:
    return count_params(params, f"layers.{layer}.attn.")


# ----------------------------
# Attention
# ----------------------------

def _attend(q: Tensor, k: Tensor, v: Tensor) -> Tuple[Tensor, Tensor]:
    """Rows of q attend over rows of k/v along the second-to-last axis."""
    scale = 1.0 / math.sqrt(q.shape[-1])
    attn = softmax_rows(mul(matmul(q, swap_last(k)), scale))
    return matmul(attn, v), attn


def _split_qkv(qkv: Tensor, dh: int) -> Tuple[Tensor, Tensor, Tensor]:
    lead = (Ellipsis,)
    return (
        take(qkv, lead + (slice(0, dh),)),
        take(qkv, lead + (slice(dh, 2 * dh),)),
        take(qkv, lead + (slice(2 * dh, 3 * dh),)),
    )


def self_attention(x: Union[Tensor, np.ndarray], w: Tensor, return_attention: bool = False):
    """
    One attention head on a (D, T) tracklet: [q, k, v] = x^T W,
    A = softmax(q k^T / sqrt(D_h)), output (A v)^T of shape (D_h, T).
    """
    x = as_tensor(x, like=w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[0] != w.shape[0] or w.shape[1] % 3 != 0:
        raise ShapeError(f"self_attention: x {x.shape} does not fit projection {w.shape}")
    dh = w.shape[1] // 3
    q, k, v = _split_qkv(matmul(transpose(x), w), dh)
    out, attn = _attend(q, k, v)
    out = transpose(out)
    return (out, attn) if return_attention else out


def multi_head_attention(z: Tensor, w: Tensor, wo: Tensor, attn_out: Optional[List[np.ndarray]] = None) -> Tensor:
    """z is (B, T, D); w is (heads, D, 3 D_h); wo is (heads * D_h, D)."""
    b, t, d = z.shape
    heads, _, three_dh = w.shape
    dh = three_dh // 3
    qkv = matmul(z.reshape(b, 1, t, d), w)  # (B, heads, T, 3 D_h)
    q, k, v = _split_qkv(qkv, dh)
    out, attn = _attend(q, k, v)
    if attn_out is not None:
        attn_out.append(attn.data)
    merged = transpose(out, (0, 2, 1, 3)).reshape(b, t, heads * dh)
    return matmul(merged, wo)


# ----------------------------
# Encoder and embedding
# ----------------------------

def encoder_forward(
    x: Union[Tensor, np.ndarray],
    cfg: ConnectorConfig,
    params: Params,
    attn_out: Optional[List[np.ndarray]] = None,
) -> Tensor:
    """x is (K, T) or (B, K, T); returns z_L as (D, T) or (B, D, T)."""
    x = as_tensor(x, like=params["input.w"])
    if x.ndim not in (2, 3) or x.shape[-2] != cfg.feature_dim:
        raise ShapeError(f"connector expects (K={cfg.feature_dim}, T) input, got {x.shape}")
    batched = x.ndim == 3
    if not batched:
        x = x.reshape(1, *x.shape)

    z = linear(transpose(x, (0, 2, 1)), params["input.w"], params["input.b"])  # (B, T, D)
    for i in range(cfg.layers):
        p = f"layers.{i}"
        a = multi_head_attention(z, params[f"{p}.attn.w"], params[f"{p}.attn.wo"], attn_out)
        z = layer_norm(add(z, a), params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        f = relu(linear(z, params[f"{p}.ff.w1"], params[f"{p}.ff.b1"]))
        f = linear(f, params[f"{p}.ff.w2"], params[f"{p}.ff.b2"])
        z = layer_norm(add(z, f), params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])

    z = transpose(z, (0, 2, 1))  # (B, D, T)
    return z if batched else z.reshape(z.shape[1], z.shape[2])


def pooled_embedding(x: Union[Tensor, np.ndarray], cfg: ConnectorConfig, params: Params) -> Tensor:
    """(B, K, T) -> (B, D) unit rows; differentiable, used in training."""
    z = encoder_forward(x, cfg, params)
    if z.ndim == 2:
        z = z.reshape(1, *z.shape)
    return l2_normalize(mean(z, axis=-1))


def embed(x: np.ndarray, cfg: ConnectorConfig, params: Params, chunk: bool = True) -> TrackletEmbedding:
    """
    Embedding of one (K, T) tracklet. Tracklets longer than two windows are
    embedded window by window (50% overlap) and the unit vectors averaged,
    then re-normalized.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"embed expects a non-empty (K, T) matrix, got {x.shape}")
    with no_grad():
        n = x.shape[1]
        if not chunk or n <= 2 * cfg.window:
            h = pooled_embedding(x, cfg, params).data[0]
        else:
            stride = max(cfg.window // 2, 1)
            parts = []
            for s in window_starts(n, cfg.window, stride):
                lo = min(s, n - cfg.window)
                parts.append(pooled_embedding(x[:, lo: lo + cfg.window], cfg, params).data[0].astype(np.float64))
            avg = np.mean(parts, axis=0)
            h = (avg / np.linalg.norm(avg)).astype(np.float32)
    return TrackletEmbedding(h=h)


def classify(h: Tensor, params: Params) -> Tensor:
    return matmul(h, params["classifier.w"])


# ----------------------------
# Losses
# ----------------------------

def batch_hard_triplet(dist: Tensor, labels: np.ndarray, margin: float) -> Tensor:
    """
    Sum over anchors of [d(a, hardest positive) - d(a, hardest negative) + margin]_+.
    Anchors without any positive in the batch contribute nothing.
    """
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise ValueError("triplet loss needs at least two identities in the batch")
    n = labels.shape[0]
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    anchors = np.flatnonzero(pos_mask.any(axis=1))
    if anchors.size == 0:
        return sum_(mul(take(dist, (0, 0)), 0.0))

    d = dist.data.astype(np.float64)
    pos = np.where(pos_mask, d, -np.inf)[anchors].argmax(axis=1)
    neg = np.where(~same, d, np.inf)[anchors].argmin(axis=1)
    d_ap = take(dist, (anchors, pos))
    d_an = take(dist, (anchors, neg))
    return sum_(relu(add(sub(d_ap, d_an), margin)))


def connector_loss(
    h: Tensor,
    logits: Tensor,
    labels: np.ndarray,
    margin: float = 0.2,
    triplet_weight: float = 0.5,
) -> Tuple[Tensor, Tensor, Tensor]:
    """Cross-entropy plus weighted batch-hard triplet loss; returns (total, xent, triplet)."""
    labels = np.asarray(labels, dtype=np.int64)
    if h.shape[0] != labels.shape[0]:
        raise ShapeError(f"{h.shape[0]} embeddings for {labels.shape[0]} labels")
    triplet = batch_hard_triplet(pairwise_distances(h), labels, margin)
    xent = cross_entropy(logits, labels)
    return add(xent, mul(triplet, triplet_weight)), xent, triplet


def triplet_satisfaction(
    embeddings: np.ndarray,
    labels: np.ndarray,
    n_triplets: int,
    rng: np.random.Generator,
) -> float:
    """Fraction of random (anchor, positive, negative) triplets with d(a, p) < d(a, n)."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    by_label = {}
    for i, lab in enumerate(labels.tolist()):
        by_label.setdefault(lab, []).append(i)
    usable = [lab for lab, idx in by_label.items() if len(idx) >= 2]
    if not usable or len(by_label) < 2:
        raise ValueError("need an identity with two samples and at least two identities")

    hits = 0
    for _ in range(n_triplets):
        lab = usable[rng.integers(len(usable))]
        a, p = rng.choice(by_label[lab], size=2, replace=False)
        n = rng.choice(np.flatnonzero(labels != lab))
        d_ap = np.linalg.norm(embeddings[a] - embeddings[p])
        d_an = np.linalg.norm(embeddings[a] - embeddings[n])
        hits += int(d_ap < d_an)
    return hits / n_triplets if n_triplets else 0.0


@dataclass(frozen=True, eq=False)
class ConnectorModel:
    cfg: ConnectorConfig
    params: Params

    def embed(self, x: np.ndarray) -> TrackletEmbedding:
        return embed(x, self.cfg, self.params)

    def save(self, path: Union[str, Path], **meta) -> None:
        save_checkpoint(path, self.params, {"kind": "connector", "config": self.cfg.to_dict(), **meta})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ConnectorModel":
        params, meta = load_checkpoint(path)
        if meta.get("kind") != "connector":
            raise DataError(f"checkpoint holds a {meta.get('kind')!r} model, not a connector", path=str(path))
        return cls(cfg=ConnectorConfig(**meta["config"]), params=params)
