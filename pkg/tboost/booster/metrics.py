"""
CLEAR-MOT and identity metrics, plus average precision of predicted switch
positions.

Track sets are `{track id: {frame: box}}`. A ground-truth box and a predicted
box correspond when their IoU is at least 0.5. Frame matching, switches,
fragmentations and the global identity matching come from a motmetrics
accumulator; ratios are recomputed from the counts so that per-sequence and
aggregate reports agree.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import motmetrics as mm
import numpy as np

from .iou_tracker import iou_matrix
from .mot_io import MotRow, read_mot_rows
from .pipeline import pick_peaks
from .tracklet import SwitchMask

TrackSet = Dict[int, Dict[int, np.ndarray]]
FrameMatches = Dict[int, List[Tuple[int, int]]]  # frame -> [(gt id, pred id)]

IOU_THRESH = 0.5
MT_COVERAGE = 0.8
ML_COVERAGE = 0.2
SPLIT_TOL = 3
MATCH_EVENTS = ("MATCH", "SWITCH")
COUNT_METRICS = [
    "num_misses",
    "num_false_positives",
    "num_switches",
    "num_fragmentations",
    "idtp",
    "idfp",
    "idfn",
]


def track_set(rows: Iterable[MotRow]) -> TrackSet:
    tracks: TrackSet = {}
    for r in rows:
        tracks.setdefault(r.track_id, {})[r.frame] = r.box
    return tracks


def read_track_set(path: Union[str, Path]) -> TrackSet:
    return track_set(read_mot_rows(path))


def _by_frame(tracks: TrackSet) -> Dict[int, Dict[int, np.ndarray]]:
    frames: Dict[int, Dict[int, np.ndarray]] = {}
    for tid, boxes in tracks.items():
        for f, box in boxes.items():
            frames.setdefault(f, {})[tid] = box
    return frames


def _box_count(tracks: TrackSet) -> int:
    return sum(len(b) for b in tracks.values())


def accumulate(gt: TrackSet, pred: TrackSet, iou_thresh: float = IOU_THRESH) -> mm.MOTAccumulator:
    """One accumulator update per frame; pairs below the IoU threshold get a NaN distance."""
    gt_frames, pred_frames = _by_frame(gt), _by_frame(pred)
    acc = mm.MOTAccumulator(auto_id=False)
    for f in sorted(set(gt_frames) | set(pred_frames)):
        g_here, p_here = gt_frames.get(f, {}), pred_frames.get(f, {})
        g_ids, p_ids = sorted(g_here), sorted(p_here)
        dists = np.full((len(g_ids), len(p_ids)), np.nan)
        if g_ids and p_ids:
            scores = iou_matrix(np.array([g_here[g] for g in g_ids]), np.array([p_here[p] for p in p_ids]))
            dists = np.where(scores >= iou_thresh, 1.0 - scores, np.nan)
        acc.update(g_ids, p_ids, dists, frameid=f)
    return acc


def _frame_matches(acc: mm.MOTAccumulator, frames: Iterable[int]) -> FrameMatches:
    out: FrameMatches = {int(f): [] for f in frames}
    events = acc.mot_events
    matched = events[events.Type.isin(MATCH_EVENTS)]
    for (frame, _), oid, hid in zip(matched.index, matched.OId, matched.HId):
        out[int(frame)].append((int(oid), int(hid)))
    return {f: sorted(pairs) for f, pairs in out.items()}


def match_frames(gt: TrackSet, pred: TrackSet, iou_thresh: float = IOU_THRESH) -> FrameMatches:
    """
    Per-frame correspondences. A ground-truth object keeps the prediction it
    was last matched to while their IoU stays above the threshold; the rest
    are assigned to maximize the number of matches, then total IoU.
    """
    frames = sorted(set(_by_frame(gt)) | set(_by_frame(pred)))
    if not frames:
        return {}
    return _frame_matches(accumulate(gt, pred, iou_thresh), frames)


@dataclass
class EvalReport:
    idf1: float = 0.0
    mota: float = 0.0
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0
    fp: int = 0
    fn: int = 0
    ids: int = 0
    frag: int = 0
    mt: int = 0
    ml: int = 0
    gt_count: int = 0  # ground-truth boxes
    gt_tracks: int = 0
    pred_count: int = 0

    def recompute(self) -> "EvalReport":
        denom = 2 * self.idtp + self.idfp + self.idfn
        self.idf1 = 2 * self.idtp / denom if denom else 0.0
        self.mota = 1.0 - (self.fn + self.fp + self.ids) / self.gt_count if self.gt_count else 0.0
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _count_coverage(report: EvalReport, gt: TrackSet, matches: FrameMatches) -> None:
    tracked = Counter(g for pairs in matches.values() for g, _ in pairs)
    for g, boxes in gt.items():
        coverage = tracked[g] / len(boxes) if boxes else 0.0
        if coverage >= MT_COVERAGE:
            report.mt += 1
        elif coverage <= ML_COVERAGE:
            report.ml += 1


def evaluate(gt: TrackSet, pred: TrackSet, iou_thresh: float = IOU_THRESH) -> EvalReport:
    report = EvalReport(gt_count=_box_count(gt), gt_tracks=len(gt), pred_count=_box_count(pred))
    if not gt or not pred:
        report.fn = report.idfn = report.gt_count
        report.fp = report.idfp = report.pred_count
        report.ml = len(gt)
        return report.recompute()

    acc = accumulate(gt, pred, iou_thresh)
    summary = mm.metrics.create().compute(acc, metrics=COUNT_METRICS, name="seq")
    row = summary.iloc[0]
    report.fn = int(row["num_misses"])
    report.fp = int(row["num_false_positives"])
    report.ids = int(row["num_switches"])
    report.frag = int(row["num_fragmentations"])
    report.idtp, report.idfp, report.idfn = int(row["idtp"]), int(row["idfp"]), int(row["idfn"])
    _count_coverage(report, gt, _frame_matches(acc, sorted(set(_by_frame(gt)) | set(_by_frame(pred)))))
    return report.recompute()


def idf1(gt: TrackSet, pred: TrackSet, iou_thresh: float = IOU_THRESH) -> float:
    return evaluate(gt, pred, iou_thresh).idf1


def mota(gt: TrackSet, pred: TrackSet, iou_thresh: float = IOU_THRESH) -> float:
    return evaluate(gt, pred, iou_thresh).mota


def aggregate(reports: Iterable[EvalReport]) -> EvalReport:
    """Counts summed, ratios recomputed from the sums."""
    total = EvalReport()
    for r in reports:
        for f in fields(EvalReport):
            if f.name not in ("idf1", "mota"):
                setattr(total, f.name, getattr(total, f.name) + getattr(r, f.name))
    return total.recompute()


def evaluate_sequences(pairs: Mapping[str, Tuple[TrackSet, TrackSet]]) -> Dict[str, EvalReport]:
    """Per-sequence reports plus an "all" entry aggregating them."""
    out = {name: evaluate(gt, pred) for name, (gt, pred) in pairs.items()}
    out["all"] = aggregate(out.values())
    return out


# ----------------------------
# Splitting AP
# ----------------------------

def average_precision(hits: Sequence[Tuple[float, bool]], n_positive: int) -> float:
    """All-point interpolated AP of (confidence, is true positive) detections."""
    if n_positive == 0 or not hits:
        return 0.0
    ordered = sorted(hits, key=lambda h: -h[0])
    tp = np.cumsum([1.0 if h[1] else 0.0 for h in ordered])
    fp = np.cumsum([0.0 if h[1] else 1.0 for h in ordered])
    precision = tp / (tp + fp)
    recall = tp / n_positive
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(np.diff(recall, prepend=0.0) * precision))


def _values(mask) -> np.ndarray:
    return mask.values if isinstance(mask, SwitchMask) else np.asarray(mask, dtype=np.float64).reshape(-1)


def splitting_ap(
    predicted: Sequence[Union[SwitchMask, np.ndarray]],
    truth: Sequence[Union[SwitchMask, np.ndarray]],
    tol: int = SPLIT_TOL,
) -> float:
    """
    Peaks of each predicted mask (confidence = peak value), pooled over all
    masks in descending confidence, are true positives when within `tol`
    boundaries of a not yet matched ground-truth switch of the same mask.
    """
    if tol < 0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    if len(predicted) != len(truth):
        raise ValueError(f"{len(predicted)} predicted masks for {len(truth)} ground-truth masks")

    peaks = []
    switches = []
    for i, (pm, tm) in enumerate(zip(predicted, truth)):
        pv, tv = _values(pm), _values(tm)
        if pv.shape != tv.shape:
            raise ValueError(f"mask {i}: predicted length {pv.size} != ground-truth length {tv.size}")
        peaks.extend((float(pv[t]), i, t) for t in pick_peaks(pv, 0.0))
        switches.append(set(int(t) for t in np.flatnonzero(tv >= 0.5)))

    n_positive = sum(len(s) for s in switches)
    hits = []
    for conf, i, t in sorted(peaks, key=lambda p: (-p[0], p[1], p[2])):
        near = [s for s in switches[i] if abs(s - t) <= tol]
        if near:
            switches[i].remove(min(near, key=lambda s: (abs(s - t), s)))
            hits.append((conf, True))
        else:
            hits.append((conf, False))
    return average_precision(hits, n_positive)
