from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, ShapeError

MaskKind = Literal["truth", "predicted"]

FP_ID = -1  # ground-truth identity carried by false-positive detections
MOTION_DIMS = 4
DetKey = Tuple[int, int]  # (frame, index of the row within that frame)


@dataclass(frozen=True, eq=False)
class Tracklet:
    """
    A temporally ordered fragment of one tracker identity.

    frames     (T,) strictly increasing frame indices
    boxes      (T, 4) absolute (x, y, w, h)
    features   (K, T) appearance rows then 4 normalized box rows, when known
    appearance (T, A) raw appearance vectors, when known (synthetic data)
    gt_ids     (T,) hidden ground-truth identity per frame, FP_ID for false positives
    det_keys   (frame, row index) of the detection behind every frame
    """

    source_id: int
    frames: np.ndarray
    boxes: np.ndarray
    features: Optional[np.ndarray] = None
    appearance: Optional[np.ndarray] = None
    gt_ids: Optional[np.ndarray] = None
    det_keys: Tuple[DetKey, ...] = field(default=())

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.int64)
        boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "boxes", boxes)
        n = frames.shape[0]
        if n == 0:
            raise DataError(f"tracklet {self.source_id} is empty")
        if n > 1 and not np.all(np.diff(frames) > 0):
            raise DataError(f"tracklet {self.source_id} frames are not strictly increasing")
        if boxes.shape[0] != n:
            raise ShapeError(f"tracklet {self.source_id}: {boxes.shape[0]} boxes for {n} frames")
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float32)
            if feats.ndim != 2 or feats.shape[1] != n:
                raise ShapeError(f"tracklet {self.source_id}: features {feats.shape} for {n} frames")
            if feats.shape[0] < MOTION_DIMS + 1:
                raise ShapeError(f"feature dim must be >= 5, got {feats.shape[0]}")
            object.__setattr__(self, "features", feats)
        if self.appearance is not None and np.asarray(self.appearance).shape[0] != n:
            raise ShapeError(f"tracklet {self.source_id}: appearance rows do not match frames")
        if self.gt_ids is not None:
            gt = np.asarray(self.gt_ids, dtype=np.int64)
            if gt.shape != (n,):
                raise ShapeError(f"tracklet {self.source_id}: {gt.shape[0]} identities for {n} frames")
            object.__setattr__(self, "gt_ids", gt)
        if self.det_keys and len(self.det_keys) != n:
            raise ShapeError(f"tracklet {self.source_id}: {len(self.det_keys)} detection keys for {n} frames")

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    @property
    def start(self) -> int:
        return int(self.frames[0])

    @property
    def end(self) -> int:
        return int(self.frames[-1])

    def slice(self, lo: int, hi: int) -> "Tracklet":
        """Positions [lo, hi) as a new tracklet with the same source id."""
        return replace(
            self,
            frames=self.frames[lo:hi],
            boxes=self.boxes[lo:hi],
            features=None if self.features is None else self.features[:, lo:hi],
            appearance=None if self.appearance is None else self.appearance[lo:hi],
            gt_ids=None if self.gt_ids is None else self.gt_ids[lo:hi],
            det_keys=tuple(self.det_keys[lo:hi]),
        )


def concat_tracklets(parts: Sequence[Tracklet]) -> Tracklet:
    if not parts:
        raise ValueError("nothing to concatenate")
    first = parts[0]

    def cat(attr: str, axis: int = 0):
        vals = [getattr(p, attr) for p in parts]
        if any(v is None for v in vals):
            return None
        return np.concatenate(vals, axis=axis)

    keys: Tuple[DetKey, ...] = ()
    if all(p.det_keys for p in parts):
        keys = tuple(k for p in parts for k in p.det_keys)
    return Tracklet(
        source_id=first.source_id,
        frames=np.concatenate([p.frames for p in parts]),
        boxes=np.concatenate([p.boxes for p in parts]),
        features=cat("features", axis=1),
        appearance=cat("appearance"),
        gt_ids=cat("gt_ids"),
        det_keys=keys,
    )


@dataclass(frozen=True, eq=False)
class SwitchMask:
    """Per-boundary switch indicator; entry t sits between positions t and t+1."""

    values: np.ndarray
    kind: MaskKind = "predicted"

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "values", v)
        if self.kind == "truth":
            if not np.all((v == 0.0) | (v == 1.0)):
                raise ValueError("ground-truth switch mask must be binary")
        elif self.kind == "predicted":
            if v.size and (v.min() < 0.0 or v.max() > 1.0):
                raise ValueError("predicted switch mask must lie in [0, 1]")
        else:
            raise ValueError(f"unknown mask kind {self.kind!r}")

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def positions(self) -> List[int]:
        return [int(t) for t in np.flatnonzero(self.values >= 0.5)]


def label_switch_mask(tracklet: Tracklet) -> SwitchMask:
    """m[t] = 1 iff the ground-truth identity differs between positions t and t+1."""
    if tracklet.gt_ids is None:
        raise DataError(f"tracklet {tracklet.source_id} has no ground-truth annotations")
    ids = tracklet.gt_ids
    return SwitchMask((ids[1:] != ids[:-1]).astype(np.float64), kind="truth")


def pad_window(features: np.ndarray, window: int) -> Tuple[np.ndarray, int]:
    """
    Place a (K, n) feature matrix with n <= window in a window of length
    `window`, replicating the first frame before it and the last frame after
    it. Returns the padded matrix and the offset of the first real frame.
    """
    k, n = features.shape
    if n > window:
        raise ShapeError(f"{n} frames do not fit a window of {window}")
    if n == window:
        return features, 0
    left = (window - n) // 2
    right = window - n - left
    padded = np.concatenate(
        [np.repeat(features[:, :1], left, axis=1), features, np.repeat(features[:, -1:], right, axis=1)],
        axis=1,
    )
    return padded, left


def window_starts(n: int, window: int, stride: int) -> List[int]:
    """Start positions of sliding windows covering n frames."""
    starts = [0]
    while starts[-1] + window < n:
        starts.append(starts[-1] + stride)
    return starts
