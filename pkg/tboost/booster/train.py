from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import trange

from . import rng as rng_streams
from .connector import (
    ConnectorConfig,
    classify,
    connector_loss,
    embed,
    init_connector,
    pooled_embedding,
    triplet_satisfaction,
)
from .errors import ConfigError, DataError, ShapeError
from .nn import Params
from .optim import OptimizerState, adam_cosine_step, zero_grads
from .splitter import SplitterConfig, init_splitter, loss_for, splitter_forward
from .tensor import no_grad
from .tracklet import Tracklet, label_switch_mask, pad_window, window_starts

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000  # cosine-annealing horizon
    lr: float = 0.001
    batch_size: int = 16  # splitter windows per step
    positive_fraction: float = 0.5
    identities_per_batch: int = 8  # P
    samples_per_identity: int = 4  # S
    crop_len: int = 32
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ConfigError(f"positive_fraction must be in [0, 1], got {self.positive_fraction}")
        if self.identities_per_batch < 2:
            raise ConfigError("identities_per_batch must be >= 2")
        if self.samples_per_identity < 2:
            raise ConfigError("samples_per_identity must be >= 2")
        if self.crop_len < 1:
            raise ConfigError(f"crop_len must be >= 1, got {self.crop_len}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")


@dataclass(frozen=True, eq=False)
class SplitterWindow:
    """One training window: features (K, T), frames (T,), m_star and valid (T-1,)."""

    features: np.ndarray
    frames: np.ndarray
    m_star: np.ndarray
    valid: np.ndarray

    def has_switch(self) -> bool:
        return bool(np.any(self.m_star * self.valid > 0))


@dataclass(frozen=True, eq=False)
class ConnectorSample:
    features: np.ndarray  # (K, n), one identity throughout
    identity: int


@dataclass
class TrainResult:
    params: Params
    losses: List[float] = field(default_factory=list)
    config: Optional[object] = None


# ----------------------------
# Windows
# ----------------------------

def extract_window(features: np.ndarray, start: int, window: int) -> Tuple[np.ndarray, int, int]:
    """
    Real frames [start, start + window) clipped to the tracklet, padded to
    `window` by replication. Returns (padded, offset of first real frame,
    number of real frames).
    """
    n = features.shape[1]
    real = features[:, start: min(start + window, n)]
    padded, offset = pad_window(real, window)
    return padded, offset, real.shape[1]


def windows_from_tracklet(tracklet: Tracklet, window: int) -> List[SplitterWindow]:
    if tracklet.features is None:
        raise DataError(f"tracklet {tracklet.source_id} has no features")
    n = len(tracklet)
    if n < 2:
        return []
    mask = label_switch_mask(tracklet).values
    out: List[SplitterWindow] = []
    for s in window_starts(n, window, max(window // 2, 1)):
        padded, offset, m = extract_window(tracklet.features, s, window)
        m_star = np.zeros(window - 1, dtype=np.float32)
        valid = np.zeros(window - 1, dtype=np.float32)
        m_star[offset: offset + m - 1] = mask[s: s + m - 1]
        valid[offset: offset + m - 1] = 1.0
        frames = np.concatenate(
            [
                np.full(offset, tracklet.frames[s]),
                tracklet.frames[s: s + m],
                np.full(window - offset - m, tracklet.frames[s + m - 1]),
            ]
        )
        out.append(SplitterWindow(features=padded.astype(np.float32), frames=frames, m_star=m_star, valid=valid))
    return out


# ----------------------------
# Splitter
# ----------------------------

def _check_windows(dataset: Sequence[SplitterWindow], cfg: SplitterConfig) -> None:
    if not dataset:
        raise DataError("splitter training set is empty")
    for w in dataset:
        if w.features.shape != (cfg.feature_dim, cfg.window):
            raise ShapeError(f"window features {w.features.shape} != ({cfg.feature_dim}, {cfg.window})")


def _sample_splitter_batch(
    rng: np.random.Generator,
    positives: np.ndarray,
    negatives: np.ndarray,
    batch_size: int,
    positive_fraction: float,
) -> np.ndarray:
    n_pos = int(round(batch_size * positive_fraction)) if positives.size else 0
    if not negatives.size:
        n_pos = batch_size
    picks = []
    if n_pos:
        picks.append(rng.choice(positives, size=n_pos, replace=True))
    if batch_size - n_pos:
        picks.append(rng.choice(negatives, size=batch_size - n_pos, replace=True))
    return np.concatenate(picks)


def train_splitter(
    dataset: Sequence[SplitterWindow],
    cfg: SplitterConfig,
    train: TrainConfig,
    seed: int = 0,
    params: Optional[Params] = None,
    progress: bool = False,
) -> TrainResult:
    _check_windows(dataset, cfg)
    if params is None:
        params = init_splitter(cfg, seed)
    state = OptimizerState(base_lr=train.lr, horizon=train.iterations)
    rng = rng_streams.stream(seed, "batch", 1)

    flags = np.array([w.has_switch() for w in dataset])
    positives, negatives = np.flatnonzero(flags), np.flatnonzero(~flags)
    logger.info(
        "training splitter (%s smoothing): %d windows, %d with switches, %d iterations",
        cfg.smoothing, len(dataset), positives.size, train.iterations,
    )

    result = TrainResult(params=params, config=cfg)
    for it in trange(train.iterations, disable=not progress, desc="splitter"):
        idx = _sample_splitter_batch(rng, positives, negatives, train.batch_size, train.positive_fraction)
        x = np.stack([dataset[i].features for i in idx])
        m_star = np.stack([dataset[i].m_star for i in idx])
        valid = np.stack([dataset[i].valid for i in idx])

        out = splitter_forward(x, cfg, params)
        loss = loss_for(cfg, out, m_star, valid)
        zero_grads(params)
        loss.backward()
        adam_cosine_step(params, None, state)

        result.losses.append(loss.item())
        if (it + 1) % train.log_every == 0:
            recent = float(np.mean(result.losses[-train.log_every:]))
            logger.info("splitter iter %d/%d loss %.4f", it + 1, train.iterations, recent)
    return result


def splitter_holdout_loss(
    dataset: Sequence[SplitterWindow],
    cfg: SplitterConfig,
    params: Params,
    batch_size: int = 64,
) -> float:
    """Mean per-window loss (the config's smoothing kind) over a held-out set."""
    _check_windows(dataset, cfg)
    total = 0.0
    with no_grad():
        for lo in range(0, len(dataset), batch_size):
            chunk = dataset[lo: lo + batch_size]
            out = splitter_forward(np.stack([w.features for w in chunk]), cfg, params)
            loss = loss_for(cfg, out, np.stack([w.m_star for w in chunk]), np.stack([w.valid for w in chunk]))
            total += loss.item()
    return total / len(dataset)


# ----------------------------
# Connector
# ----------------------------

def _crop(rng: np.random.Generator, features: np.ndarray, length: int) -> np.ndarray:
    n = features.shape[1]
    if n >= length:
        s = int(rng.integers(0, n - length + 1))
        return features[:, s: s + length]
    padded, _ = pad_window(features, length)
    return padded


def train_connector(
    dataset: Sequence[ConnectorSample],
    cfg: ConnectorConfig,
    train: TrainConfig,
    seed: int = 0,
    progress: bool = False,
) -> TrainResult:
    if not dataset:
        raise DataError("connector training set is empty")
    identities = sorted({s.identity for s in dataset})
    if len(identities) < 2:
        raise DataError("connector training needs at least two identities")
    for s in dataset:
        if s.features.shape[0] != cfg.feature_dim:
            raise ShapeError(f"sample features have {s.features.shape[0]} rows, expected {cfg.feature_dim}")

    label_of: Dict[int, int] = {ident: i for i, ident in enumerate(identities)}
    by_label: Dict[int, List[int]] = {}
    for i, s in enumerate(dataset):
        by_label.setdefault(label_of[s.identity], []).append(i)

    cfg = replace(cfg, num_classes=len(identities))
    params = init_connector(cfg, seed)
    state = OptimizerState(base_lr=train.lr, horizon=train.iterations)
    batch_rng = rng_streams.stream(seed, "batch", 2)
    crop_rng = rng_streams.stream(seed, "crop", 2)
    p = min(train.identities_per_batch, len(identities))
    logger.info(
        "training connector: %d tracklets, %d identities, %d heads, %d iterations",
        len(dataset), len(identities), cfg.heads, train.iterations,
    )

    result = TrainResult(params=params, config=cfg)
    for it in trange(train.iterations, disable=not progress, desc="connector"):
        chosen = batch_rng.choice(len(identities), size=p, replace=False)
        xs, labels = [], []
        for lab in chosen:
            for i in batch_rng.choice(by_label[int(lab)], size=train.samples_per_identity, replace=True):
                xs.append(_crop(crop_rng, dataset[int(i)].features, train.crop_len))
                labels.append(int(lab))
        x = np.stack(xs).astype(np.float32)
        labels_arr = np.asarray(labels, dtype=np.int64)

        h = pooled_embedding(x, cfg, params)
        total, xent, triplet = connector_loss(h, classify(h, params), labels_arr, cfg.margin, cfg.triplet_weight)
        zero_grads(params)
        total.backward()
        adam_cosine_step(params, None, state)

        result.losses.append(total.item())
        if (it + 1) % train.log_every == 0:
            recent = float(np.mean(result.losses[-train.log_every:]))
            logger.info(
                "connector iter %d/%d loss %.4f (xent %.4f, triplet %.4f)",
                it + 1, train.iterations, recent, xent.item(), triplet.item(),
            )
    return result


def connector_holdout_satisfaction(
    dataset: Sequence[ConnectorSample],
    cfg: ConnectorConfig,
    params: Params,
    n_triplets: int = 2000,
    seed: int = 0,
) -> Optional[float]:
    """
    Share of held-out triplets where the positive is closer than the negative;
    None when no identity has two tracklets or only one identity is present.
    """
    counts = Counter(s.identity for s in dataset)
    if len(counts) < 2 or max(counts.values()) < 2:
        return None
    embeddings = np.stack([embed(s.features, cfg, params).h for s in dataset])
    labels = np.array([s.identity for s in dataset])
    return triplet_satisfaction(embeddings, labels, n_triplets, rng_streams.stream(seed, "eval"))
