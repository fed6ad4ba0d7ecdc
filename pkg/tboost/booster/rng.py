"""
Named, seedable random streams.

Every consumer draws from its own stream so that adding draws in one place
never shifts the numbers another consumer sees. A stream is a numpy
Generator over the counter-based Philox bit generator, keyed by
(seed, stream name, *extra keys) through a SeedSequence spawn key:

    init      parameter initialization
    scene     ground-truth trajectories and appearance anchors
    noise     detector corruption (jitter, misses, false positives, flips)
    features  observation noise on appearance vectors
    batch     mini-batch sampling during training
    crop      temporal crops of training tracklets
    eval      held-out sampling (triplet satisfaction)
"""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("init", "scene", "noise", "features", "batch", "crop", "eval")


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8")) & 0xFFFFFFFF


def stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    if name not in STREAMS:
        raise ValueError(f"unknown rng stream {name!r}; expected one of {STREAMS}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    spawn_key = (_name_key(name),) + tuple(int(k) & 0xFFFFFFFF for k in keys)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))
