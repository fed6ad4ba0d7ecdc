"""
Synthetic corpus: sequences of ground truth, tracker output and features,
plus the JSONL training sets both models are fitted on.

    <out>/seq_000/gt.txt          ground-truth tracks (MOTChallenge)
    <out>/seq_000/tracks.txt      IOU-tracker output
    <out>/seq_000/feats.jsonl     one feature vector per tracks.txt row
    <out>/splitter_windows.jsonl  labeled windows for the splitter
    <out>/connector_tracklets.jsonl  single-identity tracklets for the connector
    <out>/split.json              train / holdout sequence indices

Frames are written 1-based, as MOTChallenge files are.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from tqdm import tqdm

from . import rng as rng_streams
from .detections import NoiseConfig, corrupt, maybe_flip
from .errors import ConfigError, DataError
from .features import make_features
from .iou_tracker import Detection, IouTrackerConfig, iou_track
from .mot_io import MotRow, make_row, write_features, write_mot
from .scene import MotionConfig, SceneGroundTruth, generate_scene
from .tracklet import FP_ID, DetKey, Tracklet, label_switch_mask
from .train import ConnectorSample, SplitterWindow, windows_from_tracklet

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
WINDOWS_FILE = "splitter_windows.jsonl"
SAMPLES_FILE = "connector_tracklets.jsonl"
SPLIT_FILE = "split.json"
IDENTITY_STRIDE = 100_000  # connector identities are seq * stride + gt id


@dataclass(frozen=True)
class CorpusConfig:
    n_sequences: int = 8
    n_train: int = 6
    n_identities: int = 12
    length: int = 300
    iou_thresholds: Tuple[float, ...] = (0.3, 0.5, 0.7)
    min_sample_len: int = 4  # shortest single-identity tracklet kept for the connector

    def __post_init__(self) -> None:
        object.__setattr__(self, "iou_thresholds", tuple(float(t) for t in self.iou_thresholds))
        if self.n_sequences < 1:
            raise ConfigError(f"corpus.n_sequences must be >= 1, got {self.n_sequences}")
        if not 0 <= self.n_train <= self.n_sequences:
            raise ConfigError("corpus.n_train must be in [0, n_sequences]")
        if self.n_identities < 1:
            raise ConfigError(f"corpus.n_identities must be >= 1, got {self.n_identities}")
        if self.length < 2:
            raise ConfigError(f"corpus.length must be >= 2, got {self.length}")
        for t in self.iou_thresholds:
            if not 0.0 < t < 1.0:
                raise ConfigError(f"corpus.iou_thresholds entries must be in (0, 1), got {t}")
        if self.min_sample_len < 1:
            raise ConfigError("corpus.min_sample_len must be >= 1")

    @property
    def train_indices(self) -> List[int]:
        return list(range(self.n_train))

    @property
    def holdout_indices(self) -> List[int]:
        return list(range(self.n_train, self.n_sequences))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["iou_thresholds"] = list(self.iou_thresholds)
        return d


@dataclass(eq=False)
class SequenceData:
    index: int
    seed: int
    theta: float
    scene: SceneGroundTruth
    detections: List[List[Detection]]
    tracklets: List[Tracklet] = field(default_factory=list)

    @property
    def name(self) -> str:
        return sequence_name(self.index)

    def switch_count(self) -> int:
        return int(sum(label_switch_mask(t).values.sum() for t in self.tracklets if len(t) > 1))


def sequence_name(index: int) -> str:
    return f"seq_{index:03d}"


def sequence_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def synthesize_sequence(
    seed: int,
    index: int,
    corpus: CorpusConfig,
    motion: MotionConfig,
    noise: NoiseConfig,
    tracker: IouTrackerConfig,
    feature_dim: int,
) -> SequenceData:
    seq_seed = sequence_seed(seed, index)
    scene = generate_scene(seq_seed, corpus.n_identities, corpus.length, motion)
    scene = maybe_flip(scene, noise, seq_seed)
    detections = corrupt(scene, noise, seq_seed)

    theta = tracker.threshold
    if corpus.iou_thresholds:
        pick = rng_streams.stream(seq_seed, "noise", 2).integers(len(corpus.iou_thresholds))
        theta = corpus.iou_thresholds[int(pick)]
    tracklets = iou_track(detections, IouTrackerConfig(threshold=theta, max_gap=tracker.max_gap))
    tracklets = [make_features(t, scene, feature_dim) for t in tracklets]
    return SequenceData(index=index, seed=seq_seed, theta=theta, scene=scene, detections=detections, tracklets=tracklets)


# ----------------------------
# Sequence files
# ----------------------------

def gt_rows(scene: SceneGroundTruth) -> List[MotRow]:
    rows = []
    for ident in scene.identities:
        traj = scene.trajectories[ident]
        for i, box in enumerate(traj.boxes):
            rows.append(make_row(traj.start + i + 1, ident, box))
    return rows


def tracklet_rows(tracklets: Sequence[Tracklet]) -> Tuple[List[MotRow], Dict[DetKey, np.ndarray]]:
    """
    Rows for a tracks file (frame-major order, row indices assigned in that
    order) and the matching feature sidecar entries.
    """
    staged = []
    for t in tracklets:
        for pos in range(len(t)):
            staged.append((int(t.frames[pos]) + 1, t.source_id, t, pos))
    staged.sort(key=lambda s: (s[0], s[1]))

    rows: List[MotRow] = []
    feats: Dict[DetKey, np.ndarray] = {}
    per_frame: Dict[int, int] = {}
    for frame, tid, t, pos in staged:
        index = per_frame.get(frame, 0)
        per_frame[frame] = index + 1
        rows.append(make_row(frame, tid, t.boxes[pos], index=index))
        if t.features is not None:
            feats[(frame, index)] = t.features[:, pos]
    return rows, feats


def write_sequence(out_dir: PathLike, seq: SequenceData) -> Path:
    d = Path(out_dir) / seq.name
    d.mkdir(parents=True, exist_ok=True)
    write_mot(d / "gt.txt", gt_rows(seq.scene))
    rows, feats = tracklet_rows(seq.tracklets)
    write_mot(d / "tracks.txt", rows)
    write_features(d / "feats.jsonl", feats)
    return d


# ----------------------------
# Training sets
# ----------------------------

def identity_segments(tracklet: Tracklet, min_len: int = 1) -> List[Tracklet]:
    """Cut a tracklet at its ground-truth switches; false-positive pieces are dropped."""
    positions = label_switch_mask(tracklet).positions() if len(tracklet) > 1 else []
    bounds = [0] + [p + 1 for p in positions] + [len(tracklet)]
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        piece = tracklet.slice(lo, hi)
        if piece.gt_ids[0] != FP_ID and len(piece) >= min_len:
            out.append(piece)
    return out


def connector_samples(seq: SequenceData, min_len: int) -> List[ConnectorSample]:
    out = []
    for t in seq.tracklets:
        for piece in identity_segments(t, min_len):
            out.append(ConnectorSample(features=piece.features, identity=seq.index * IDENTITY_STRIDE + int(piece.gt_ids[0])))
    return out


def splitter_windows(seq: SequenceData, window: int) -> List[SplitterWindow]:
    out = []
    for t in seq.tracklets:
        out.extend(windows_from_tracklet(t, window))
    return out


def _rounded(a: np.ndarray, digits: int = 5) -> list:
    return np.round(np.asarray(a, dtype=np.float64), digits).tolist()


def _window_record(seq: int, w: SplitterWindow) -> dict:
    return {
        "seq": seq,
        "features": _rounded(w.features),
        "frames": [int(f) for f in w.frames],
        "m_star": [int(v) for v in w.m_star],
        "valid": [int(v) for v in w.valid],
    }


def _sample_record(seq: int, s: ConnectorSample) -> dict:
    return {"seq": seq, "identity": int(s.identity), "features": _rounded(s.features)}


def _read_jsonl(path: PathLike, seqs: Optional[Set[int]]) -> Iterable[Tuple[int, dict]]:
    path = str(path)
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as e:
                raise DataError(f"bad JSON ({e})", line=lineno, path=path) from None
            if seqs is None or int(obj.get("seq", -1)) in seqs:
                yield lineno, obj


def load_windows(path: PathLike, seqs: Optional[Iterable[int]] = None) -> List[SplitterWindow]:
    wanted = None if seqs is None else set(seqs)
    out = []
    for lineno, obj in _read_jsonl(path, wanted):
        try:
            out.append(
                SplitterWindow(
                    features=np.asarray(obj["features"], dtype=np.float32),
                    frames=np.asarray(obj["frames"], dtype=np.int64),
                    m_star=np.asarray(obj["m_star"], dtype=np.float32),
                    valid=np.asarray(obj["valid"], dtype=np.float32),
                )
            )
        except KeyError as e:
            raise DataError(f"window record is missing {e}", line=lineno, path=str(path)) from None
    return out


def load_samples(path: PathLike, seqs: Optional[Iterable[int]] = None) -> List[ConnectorSample]:
    wanted = None if seqs is None else set(seqs)
    out = []
    for lineno, obj in _read_jsonl(path, wanted):
        try:
            out.append(ConnectorSample(features=np.asarray(obj["features"], dtype=np.float32), identity=int(obj["identity"])))
        except KeyError as e:
            raise DataError(f"tracklet record is missing {e}", line=lineno, path=str(path)) from None
    return out


def read_split(corpus_dir: PathLike) -> Dict[str, List[int]]:
    path = Path(corpus_dir) / SPLIT_FILE
    if not path.exists():
        raise DataError(f"{path} not found; run synth first")
    with open(path, "r", encoding="utf-8") as f:
        split = json.load(f)
    return {"train": [int(i) for i in split["train"]], "holdout": [int(i) for i in split["holdout"]]}


@dataclass
class CorpusSummary:
    sequences: int = 0
    tracklets: int = 0
    tracklets_with_switch: int = 0
    switches: int = 0
    windows: int = 0
    samples: int = 0

    @property
    def switch_fraction(self) -> float:
        return self.tracklets_with_switch / self.tracklets if self.tracklets else 0.0


def write_corpus(
    out_dir: PathLike,
    seed: int,
    corpus: CorpusConfig,
    motion: MotionConfig,
    noise: NoiseConfig,
    tracker: IouTrackerConfig,
    feature_dim: int,
    window: int,
    progress: bool = False,
) -> CorpusSummary:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = CorpusSummary()
    with open(out / WINDOWS_FILE, "w", encoding="utf-8", newline="\n") as wf, open(
        out / SAMPLES_FILE, "w", encoding="utf-8", newline="\n"
    ) as sf:
        for index in tqdm(range(corpus.n_sequences), disable=not progress, desc="synth"):
            seq = synthesize_sequence(seed, index, corpus, motion, noise, tracker, feature_dim)
            write_sequence(out, seq)
            windows = splitter_windows(seq, window)
            samples = connector_samples(seq, corpus.min_sample_len)
            for w in windows:
                wf.write(json.dumps(_window_record(index, w)) + "\n")
            for s in samples:
                sf.write(json.dumps(_sample_record(index, s)) + "\n")

            with_switch = sum(1 for t in seq.tracklets if len(t) > 1 and label_switch_mask(t).values.any())
            summary.sequences += 1
            summary.tracklets += len(seq.tracklets)
            summary.tracklets_with_switch += with_switch
            summary.switches += seq.switch_count()
            summary.windows += len(windows)
            summary.samples += len(samples)
            logger.info(
                "%s: theta=%.1f, %d tracklets (%d with switches), %d windows, %d connector tracklets",
                seq.name, seq.theta, len(seq.tracklets), with_switch, len(windows), len(samples),
            )

    with open(out / SPLIT_FILE, "w", encoding="utf-8", newline="\n") as f:
        json.dump({"train": corpus.train_indices, "holdout": corpus.holdout_indices}, f)
        f.write("\n")
    return summary
