"""
Synthetic ground-truth scenes: boxes moving piecewise-linearly through an
image, some pairs deliberately steered through each other so a
tracker downstream has a chance to swap their identities.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import rng as rng_streams
from .errors import ConfigError
from .iou_tracker import iou


@dataclass(frozen=True)
class MotionConfig:
    width: float = 1920.0
    height: float = 1080.0
    min_span: int = 40
    speed_lo: float = 2.0  # pixels per frame
    speed_hi: float = 8.0
    turn_prob: float = 0.02
    crossing_rate: float = 0.5  # share of identity pairs steered through each other
    crossing_calm: int = 10  # no turns within this many frames of a planned crossing
    box_w_lo: float = 40.0
    box_w_hi: float = 90.0
    aspect: float = 2.5
    appearance_dim: int = 32
    drift_std: float = 0.02

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"degenerate scene size {self.width}x{self.height}")
        if self.min_span < 1:
            raise ConfigError(f"scene.min_span must be >= 1, got {self.min_span}")
        if not 0 < self.speed_lo <= self.speed_hi:
            raise ConfigError("scene speeds must satisfy 0 < speed_lo <= speed_hi")
        for name in ("turn_prob", "crossing_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"scene.{name} must be in [0, 1], got {v}")
        if not 0 < self.box_w_lo <= self.box_w_hi:
            raise ConfigError("scene box widths must satisfy 0 < box_w_lo <= box_w_hi")
        if self.box_w_hi * self.aspect > 0.4 * self.height or self.box_w_hi > 0.4 * self.width:
            raise ConfigError("boxes may not exceed 40% of the image")
        if self.appearance_dim < 1:
            raise ConfigError(f"scene.appearance_dim must be >= 1, got {self.appearance_dim}")
        if self.drift_std < 0:
            raise ConfigError(f"scene.drift_std must be >= 0, got {self.drift_std}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Trajectory:
    identity: int
    start: int  # first frame; frames are contiguous
    boxes: np.ndarray  # (n, 4) x, y, w, h
    appearance: np.ndarray  # (n, A) anchor plus accumulated drift

    @property
    def end(self) -> int:
        return self.start + self.boxes.shape[0] - 1

    def present(self, frame: int) -> bool:
        return self.start <= frame <= self.end

    def box_at(self, frame: int) -> np.ndarray:
        return self.boxes[frame - self.start]

    def appearance_at(self, frame: int) -> np.ndarray:
        return self.appearance[frame - self.start]


@dataclass(frozen=True, eq=False)
class SceneGroundTruth:
    seed: int
    width: float
    height: float
    length: int
    trajectories: Dict[int, Trajectory]

    @property
    def identities(self) -> List[int]:
        return sorted(self.trajectories)

    @property
    def appearance_dim(self) -> int:
        first = next(iter(self.trajectories.values()))
        return first.appearance.shape[1]

    def present_at(self, frame: int) -> List[Trajectory]:
        return [self.trajectories[i] for i in self.identities if self.trajectories[i].present(frame)]


def _integrate(
    rng: np.random.Generator,
    pos: np.ndarray,
    vel: np.ndarray,
    steps: int,
    motion: MotionConfig,
    calm: Optional[int],
) -> np.ndarray:
    """Centers for `steps` frames after the anchor, turning and bouncing off the image edges."""
    out = np.empty((steps, 2))
    p, v = pos.copy(), vel.copy()
    for i in range(steps):
        if (calm is None or i >= calm) and rng.random() < motion.turn_prob:
            angle = rng.uniform(math.pi / 6, math.pi / 2) * rng.choice([-1.0, 1.0])
            c, s = math.cos(angle), math.sin(angle)
            v = np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])
        p = p + v
        for axis, bound in ((0, motion.width), (1, motion.height)):
            if p[axis] < 0.0 or p[axis] > bound:
                v[axis] = -v[axis]
                p[axis] = min(max(p[axis], 0.0), bound)
        out[i] = p
    return out


def _boxes_from_centers(centers: np.ndarray, w: float, h: float) -> np.ndarray:
    boxes = np.empty((centers.shape[0], 4))
    boxes[:, 0] = centers[:, 0] - w / 2.0
    boxes[:, 1] = centers[:, 1] - h / 2.0
    boxes[:, 2] = w
    boxes[:, 3] = h
    return boxes


def _appearance(rng: np.random.Generator, n: int, dim: int, drift_std: float) -> np.ndarray:
    anchor = rng.normal(0.0, 1.0, size=dim)
    steps = rng.normal(0.0, drift_std, size=(n, dim)) if drift_std > 0 else np.zeros((n, dim))
    steps[0] = 0.0
    return anchor[None, :] + np.cumsum(steps, axis=0)


def _trajectory(
    rng: np.random.Generator,
    identity: int,
    span: Tuple[int, int],
    anchor_frame: int,
    anchor_center: np.ndarray,
    velocity: np.ndarray,
    motion: MotionConfig,
    calm: Optional[int] = None,
) -> Trajectory:
    start, end = span
    w = rng.uniform(motion.box_w_lo, motion.box_w_hi)
    h = w * motion.aspect
    after = _integrate(rng, anchor_center, velocity, end - anchor_frame, motion, calm)
    before = _integrate(rng, anchor_center, -velocity, anchor_frame - start, motion, calm)[::-1]
    centers = np.concatenate([before, anchor_center[None, :], after], axis=0)
    appearance = _appearance(rng, centers.shape[0], motion.appearance_dim, motion.drift_std)
    return Trajectory(identity=identity, start=start, boxes=_boxes_from_centers(centers, w, h), appearance=appearance)


def _random_velocity(rng: np.random.Generator, motion: MotionConfig) -> np.ndarray:
    speed = rng.uniform(motion.speed_lo, motion.speed_hi)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    return np.array([speed * math.cos(angle), speed * math.sin(angle)])


def _span(rng: np.random.Generator, length: int, min_span: int) -> Tuple[int, int]:
    lo = min(min_span, length)
    n = int(rng.integers(lo, length + 1))
    start = int(rng.integers(0, length - n + 1))
    return start, start + n - 1


def generate_scene(seed: int, n_identities: int, length: int, motion: MotionConfig = MotionConfig()) -> SceneGroundTruth:
    if n_identities < 1:
        raise ConfigError(f"n_identities must be >= 1, got {n_identities}")
    if length < 2:
        raise ConfigError(f"scene length must be >= 2 frames, got {length}")
    rng = rng_streams.stream(seed, "scene")
    margin = np.array([0.15 * motion.width, 0.15 * motion.height])
    inner = np.array([motion.width, motion.height]) - 2 * margin

    trajectories: Dict[int, Trajectory] = {}
    ident = 1
    while ident <= n_identities:
        paired = ident + 1 <= n_identities and rng.random() < motion.crossing_rate
        if not paired:
            span = _span(rng, length, motion.min_span)
            center = margin + rng.random(2) * inner
            trajectories[ident] = _trajectory(rng, ident, span, span[0], center, _random_velocity(rng, motion), motion)
            ident += 1
            continue

        # two identities meet at the same point on the same frame, heading apart
        span_a = _span(rng, length, motion.min_span)
        meet = int(rng.integers(span_a[0], span_a[1] + 1))
        half = max(motion.min_span // 2, 1)
        span_b = (max(0, meet - half - int(rng.integers(0, half + 1))), min(length - 1, meet + half + int(rng.integers(0, half + 1))))
        center = margin + rng.random(2) * inner
        vel = _random_velocity(rng, motion)
        calm = motion.crossing_calm
        trajectories[ident] = _trajectory(rng, ident, span_a, meet, center, vel, motion, calm)
        trajectories[ident + 1] = _trajectory(rng, ident + 1, span_b, meet, center + rng.normal(0, 2.0, 2), -vel, motion, calm)
        ident += 2

    return SceneGroundTruth(seed=seed, width=motion.width, height=motion.height, length=length, trajectories=trajectories)


def head_on_scene(
    length: int = 60,
    motion: MotionConfig = MotionConfig(),
    speed: float = 6.0,
    seed: int = 0,
) -> SceneGroundTruth:
    """Two identities on one horizontal line walking into each other, meeting mid-sequence."""
    rng = rng_streams.stream(seed, "scene")
    w = (motion.box_w_lo + motion.box_w_hi) / 2.0
    h = w * motion.aspect
    mid = length // 2
    t = np.arange(length) - mid
    cy = motion.height / 2.0
    trajectories = {}
    for ident, sign in ((1, 1.0), (2, -1.0)):
        centers = np.stack([motion.width / 2.0 + sign * speed * t, np.full(length, cy)], axis=1)
        appearance = _appearance(rng, length, motion.appearance_dim, motion.drift_std)
        trajectories[ident] = Trajectory(ident, 0, _boxes_from_centers(centers, w, h), appearance)
    return SceneGroundTruth(seed=seed, width=motion.width, height=motion.height, length=length, trajectories=trajectories)


def lanes_scene(
    n_identities: int,
    length: int,
    motion: MotionConfig = MotionConfig(),
    speed: float = 4.0,
    seed: int = 0,
) -> SceneGroundTruth:
    """Identities on separate horizontal lanes that never overlap."""
    rng = rng_streams.stream(seed, "scene")
    lane_h = motion.height / n_identities
    h = 0.6 * lane_h
    w = h / motion.aspect
    trajectories = {}
    for i in range(n_identities):
        ident = i + 1
        x0 = 0.1 * motion.width
        centers = np.stack(
            [np.minimum(x0 + speed * np.arange(length), 0.9 * motion.width), np.full(length, (i + 0.5) * lane_h)], axis=1
        )
        appearance = _appearance(rng, length, motion.appearance_dim, motion.drift_std)
        trajectories[ident] = Trajectory(ident, 0, _boxes_from_centers(centers, w, h), appearance)
    return SceneGroundTruth(seed=seed, width=motion.width, height=motion.height, length=length, trajectories=trajectories)


def count_crossings(scene: SceneGroundTruth) -> int:
    """
    Pairwise crossing events: the horizontal order of two box centers flips
    between consecutive shared frames while the boxes overlap.
    """
    ids = scene.identities
    total = 0
    for i, a in enumerate(ids):
        ta = scene.trajectories[a]
        for b in ids[i + 1:]:
            tb = scene.trajectories[b]
            lo, hi = max(ta.start, tb.start), min(ta.end, tb.end)
            prev_sign = 0.0
            for f in range(lo, hi + 1):
                ba, bb = ta.box_at(f), tb.box_at(f)
                dx = (ba[0] + ba[2] / 2.0) - (bb[0] + bb[2] / 2.0)
                sign = float(np.sign(dx))
                if sign == 0.0:
                    continue
                if prev_sign and sign != prev_sign and iou(ba, bb) > 0.0:
                    total += 1
                prev_sign = sign
    return total
