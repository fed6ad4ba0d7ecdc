from __future__ import annotations

from dataclasses import replace

import numpy as np

from .errors import DataError, ShapeError
from .scene import SceneGroundTruth
from .tracklet import MOTION_DIMS, Tracklet

MOTION_CLIP = 1.5


def motion_rows(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    """(T, 4) x, y, w, h boxes -> (4, T) normalized (cx, cy, w, h)."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scale = np.array([width, height, width, height])
    centers = np.stack(
        [boxes[:, 0] + boxes[:, 2] / 2.0, boxes[:, 1] + boxes[:, 3] / 2.0, boxes[:, 2], boxes[:, 3]], axis=1
    )
    return np.clip(centers / scale, 0.0, MOTION_CLIP).T


def feature_matrix(appearance: np.ndarray, boxes: np.ndarray, width: float, height: float, k: int) -> np.ndarray:
    """Stack the first k-4 appearance dimensions over the 4 motion rows: (k, T) float32."""
    if k < MOTION_DIMS + 1:
        raise ShapeError(f"feature dim must be >= {MOTION_DIMS + 1}, got {k}")
    appearance = np.asarray(appearance, dtype=np.float64)
    need = k - MOTION_DIMS
    if appearance.shape[1] < need:
        raise ShapeError(f"appearance has {appearance.shape[1]} dims, {need} needed for K={k}")
    return np.concatenate([appearance[:, :need].T, motion_rows(boxes, width, height)], axis=0).astype(np.float32)


def make_features(tracklet: Tracklet, scene: SceneGroundTruth, k: int) -> Tracklet:
    """The tracklet with its (K, T) feature matrix filled in."""
    if tracklet.appearance is None:
        raise DataError(f"tracklet {tracklet.source_id} carries no appearance vectors")
    feats = feature_matrix(tracklet.appearance, tracklet.boxes, scene.width, scene.height, k)
    return replace(tracklet, features=feats)
