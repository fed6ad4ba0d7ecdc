from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .tracklet import FP_ID, DetKey, Tracklet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IouTrackerConfig:
    threshold: float = 0.5
    max_gap: int = 1  # frames a track may skip and still be continued

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"tracker.threshold must be in (0, 1), got {self.threshold}")
        if self.max_gap < 1:
            raise ConfigError(f"tracker.max_gap must be >= 1, got {self.max_gap}")


@dataclass(frozen=True, eq=False)
class Detection:
    frame: int
    box: np.ndarray  # x, y, w, h
    gt_id: int = FP_ID
    appearance: Optional[np.ndarray] = None


def iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = (float(v) for v in a[:4])
    bx, by, bw, bh = (float(v) for v in b[:4])
    if aw < 0 or ah < 0 or bw < 0 or bh < 0:
        raise ValueError("box width and height must be non-negative")
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n, 4) x (m, 4) boxes -> (n, m) IoU."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2])
    y2 = np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3])
    inter = np.clip(x2 - x1, 0.0, None) * np.clip(y2 - y1, 0.0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


@dataclass
class _Track:
    track_id: int
    frames: List[int] = field(default_factory=list)
    boxes: List[np.ndarray] = field(default_factory=list)
    gt_ids: List[int] = field(default_factory=list)
    appearance: List[np.ndarray] = field(default_factory=list)
    keys: List[DetKey] = field(default_factory=list)

    @property
    def last_frame(self) -> int:
        return self.frames[-1]

    def add(self, det: Detection, index: int) -> None:
        self.frames.append(det.frame)
        self.boxes.append(np.asarray(det.box, dtype=np.float64))
        self.gt_ids.append(det.gt_id)
        if det.appearance is not None:
            self.appearance.append(np.asarray(det.appearance, dtype=np.float64))
        self.keys.append((det.frame, index))

    def to_tracklet(self) -> Tracklet:
        appearance = np.stack(self.appearance) if len(self.appearance) == len(self.frames) else None
        return Tracklet(
            source_id=self.track_id,
            frames=np.asarray(self.frames),
            boxes=np.stack(self.boxes),
            appearance=appearance,
            gt_ids=np.asarray(self.gt_ids),
            det_keys=tuple(self.keys),
        )


class IouTracker:
    """
    Frame-by-frame greedy association: the highest-IoU (track, detection)
    pair above the threshold is matched first, then the next, until none is
    left; leftover detections open new tracks.
    """

    def __init__(self, cfg: IouTrackerConfig = IouTrackerConfig()):
        self.cfg = cfg
        self.active: List[_Track] = []
        self.finished: List[_Track] = []
        self.next_id = 1

    def update(self, frame: int, detections: Sequence[Detection]) -> None:
        candidates = [t for t in self.active if frame - t.last_frame <= self.cfg.max_gap]
        scores = iou_matrix(np.array([t.boxes[-1] for t in candidates]), np.array([d.box for d in detections]))

        pairs = [
            (-scores[i, j], candidates[i].track_id, j)
            for i in range(len(candidates))
            for j in range(len(detections))
            if scores[i, j] >= self.cfg.threshold
        ]
        pairs.sort()
        by_id: Dict[int, _Track] = {t.track_id: t for t in candidates}
        used_tracks, used_dets = set(), set()
        for _, tid, j in pairs:
            if tid in used_tracks or j in used_dets:
                continue
            by_id[tid].add(detections[j], j)
            used_tracks.add(tid)
            used_dets.add(j)

        for j, det in enumerate(detections):
            if j in used_dets:
                continue
            track = _Track(self.next_id)
            self.next_id += 1
            track.add(det, j)
            self.active.append(track)

        still = []
        for t in self.active:
            (still if frame + 1 - t.last_frame <= self.cfg.max_gap else self.finished).append(t)
        self.active = still

    def flush(self) -> List[Tracklet]:
        done = self.finished + self.active
        self.finished, self.active = [], []
        done.sort(key=lambda t: (t.frames[0], t.track_id))
        return [t.to_tracklet() for t in done]


def iou_track(detections: Sequence[Sequence[Detection]], cfg: IouTrackerConfig = IouTrackerConfig()) -> List[Tracklet]:
    """
    Run the tracker over per-frame detection lists (list position is the
    frame index). Each tracklet keeps the hidden identity of every detection
    it absorbed.
    """
    tracker = IouTracker(cfg)
    for frame, dets in enumerate(detections):
        for d in dets:
            if d.frame != frame:
                raise ValueError(f"detection for frame {d.frame} listed under frame {frame}")
        tracker.update(frame, dets)
    tracklets = tracker.flush()
    logger.debug("iou tracker (theta=%.2f): %d tracklets", cfg.threshold, len(tracklets))
    return tracklets
