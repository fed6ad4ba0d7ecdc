"""
Detector noise on top of ground truth: jittered boxes, missed detections,
occlusion gaps, false positives, and appearance vectors that bleed toward an
overlapping identity.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Set

import numpy as np

from . import rng as rng_streams
from .errors import ConfigError
from .iou_tracker import Detection, iou
from .scene import SceneGroundTruth, Trajectory
from .tracklet import FP_ID


@dataclass(frozen=True)
class NoiseConfig:
    jitter: float = 0.05  # box jitter std as a fraction of box size
    miss_prob: float = 0.02
    fp_rate: float = 0.5  # expected false positives per frame
    occlusion_rate: float = 0.005  # per identity and frame
    occlusion_min: int = 3
    occlusion_max: int = 15
    hflip: bool = True
    blend: float = 0.5
    obs_noise: float = 0.05

    def __post_init__(self) -> None:
        for name in ("miss_prob", "occlusion_rate", "blend"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"noise.{name} must be in [0, 1], got {v}")
        for name in ("jitter", "fp_rate", "obs_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"noise.{name} must be >= 0, got {getattr(self, name)}")
        if self.occlusion_min < 1 or self.occlusion_max < self.occlusion_min:
            raise ConfigError("noise occlusion durations must satisfy 1 <= occlusion_min <= occlusion_max")

    @classmethod
    def disabled(cls) -> "NoiseConfig":
        return cls(jitter=0.0, miss_prob=0.0, fp_rate=0.0, occlusion_rate=0.0, hflip=False, blend=0.0, obs_noise=0.0)

    def to_dict(self) -> dict:
        return asdict(self)


def flip_scene(scene: SceneGroundTruth) -> SceneGroundTruth:
    """Mirror every box horizontally: x -> W - x - w."""
    flipped: Dict[int, Trajectory] = {}
    for ident, traj in scene.trajectories.items():
        boxes = traj.boxes.copy()
        boxes[:, 0] = scene.width - boxes[:, 0] - boxes[:, 2]
        flipped[ident] = replace(traj, boxes=boxes)
    return replace(scene, trajectories=flipped)


def maybe_flip(scene: SceneGroundTruth, noise: NoiseConfig, seed: int) -> SceneGroundTruth:
    if noise.hflip and rng_streams.stream(seed, "noise", 1).random() < 0.5:
        return flip_scene(scene)
    return scene


def _occluded_frames(rng: np.random.Generator, traj: Trajectory, noise: NoiseConfig) -> Set[int]:
    hidden: Set[int] = set()
    f = traj.start
    while f <= traj.end:
        if noise.occlusion_rate > 0 and rng.random() < noise.occlusion_rate:
            duration = int(rng.integers(noise.occlusion_min, noise.occlusion_max + 1))
            hidden.update(range(f, f + duration))
            f += duration
        else:
            f += 1
    return hidden


def _jitter(rng: np.random.Generator, box: np.ndarray, s: float) -> np.ndarray:
    x, y, w, h = box
    if s == 0:
        return box.copy()
    dx, dy, sw, sh = rng.normal(0.0, s, size=4)
    return np.array([x + dx * w, y + dy * h, max(w * (1.0 + sw), 1.0), max(h * (1.0 + sh), 1.0)])


def corrupt(scene: SceneGroundTruth, noise: NoiseConfig, seed: int) -> List[List[Detection]]:
    """
    Per-frame detection lists for `scene` (already flipped if wanted).
    Detections within a frame are shuffled so their order carries no identity.
    """
    rng = rng_streams.stream(seed, "noise")
    obs = rng_streams.stream(seed, "features")
    hidden = {i: _occluded_frames(rng, scene.trajectories[i], noise) for i in scene.identities}
    dim = scene.appearance_dim
    w_lo, w_hi = _box_width_range(scene)
    aspect = _aspect(scene)

    frames: List[List[Detection]] = []
    for f in range(scene.length):
        present = scene.present_at(f)
        dets: List[Detection] = []
        for traj in present:
            if f in hidden[traj.identity] or (noise.miss_prob > 0 and rng.random() < noise.miss_prob):
                continue
            gt_box = traj.box_at(f)
            app = traj.appearance_at(f)
            if noise.blend > 0:
                best, best_iou = None, 0.0
                for other in present:
                    if other.identity == traj.identity:
                        continue
                    v = iou(gt_box, other.box_at(f))
                    if v > best_iou:
                        best, best_iou = other, v
                if best is not None:
                    beta = noise.blend * best_iou
                    app = (1.0 - beta) * app + beta * best.appearance_at(f)
            if noise.obs_noise > 0:
                app = app + obs.normal(0.0, noise.obs_noise, size=dim)
            dets.append(Detection(frame=f, box=_jitter(rng, gt_box, noise.jitter), gt_id=traj.identity, appearance=app))

        n_fp = int(rng.poisson(noise.fp_rate)) if noise.fp_rate > 0 else 0
        for _ in range(n_fp):
            w = rng.uniform(w_lo, w_hi)
            h = w * aspect
            box = np.array([rng.uniform(0, scene.width - w), rng.uniform(0, scene.height - h), w, h])
            dets.append(Detection(frame=f, box=box, gt_id=FP_ID, appearance=obs.normal(0.0, 1.0, size=dim)))

        frames.append([dets[i] for i in rng.permutation(len(dets))])
    return frames


def _box_width_range(scene: SceneGroundTruth):
    widths = np.concatenate([t.boxes[:, 2] for t in scene.trajectories.values()])
    return float(widths.min()), float(widths.max())


def _aspect(scene: SceneGroundTruth) -> float:
    boxes = np.concatenate([t.boxes for t in scene.trajectories.values()])
    return float(np.median(boxes[:, 3] / boxes[:, 2]))
