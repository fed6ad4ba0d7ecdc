"""
Inference: split tracker output at predicted identity switches, then group
the pieces back together by embedding distance.

    tracks file -> tracklets -> windowed_mask -> pick_peaks -> split_at
                -> embed -> build_graph -> greedy_group -> tracks file
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .connector import ConnectorModel
from .errors import ConfigError, DataError, ShapeError
from .mot_io import MotRow, read_features, read_mot_rows, write_mot
from .splitter import SplitterModel, splitter_forward
from .tensor import no_grad
from .tracklet import DetKey, SwitchMask, Tracklet, window_starts
from .train import extract_window

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class PipelineConfig:
    delta_s: float = 0.5
    delta_c: float = 0.9
    delta_t: int = 64
    window: int = 65
    overlap: float = 0.5
    use_splitter: bool = True
    use_connector: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_s < 1.0:
            raise ConfigError(f"pipeline.delta_s must be in (0, 1), got {self.delta_s}")
        if not 0.0 < self.delta_c <= 2.0:
            raise ConfigError(f"pipeline.delta_c must be in (0, 2], got {self.delta_c}")
        if self.delta_t < 1:
            raise ConfigError(f"pipeline.delta_t must be >= 1, got {self.delta_t}")
        if self.window < 2:
            raise ConfigError(f"pipeline.window must be >= 2, got {self.window}")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError(f"pipeline.overlap must be in [0, 1), got {self.overlap}")

    @property
    def stride(self) -> int:
        return max(1, int(self.window * (1.0 - self.overlap)))

    def to_dict(self) -> dict:
        return asdict(self)


# ----------------------------
# Splitting
# ----------------------------

def windowed_mask(tracklet: Tracklet, splitter: SplitterModel, cfg: PipelineConfig) -> SwitchMask:
    """Full-length predicted mask; boundaries seen by several windows get the mean prediction."""
    if tracklet.features is None:
        raise DataError(f"tracklet {tracklet.source_id} has no features")
    n = len(tracklet)
    if n < 2:
        return SwitchMask(np.zeros(0), kind="predicted")

    starts = window_starts(n, cfg.window, cfg.stride)
    placed = [extract_window(tracklet.features, s, cfg.window) for s in starts]
    with no_grad():
        out = splitter_forward(np.stack([p[0] for p in placed]), splitter.cfg, splitter.params)
    m_hat = out.m_hat.data.astype(np.float64)

    total = np.zeros(n - 1)
    count = np.zeros(n - 1)
    for row, (s, (_, offset, m)) in enumerate(zip(starts, placed)):
        total[s: s + m - 1] += m_hat[row, offset: offset + m - 1]
        count[s: s + m - 1] += 1.0
    return SwitchMask(np.clip(total / count, 0.0, 1.0), kind="predicted")


def pick_peaks(mask: Union[SwitchMask, np.ndarray], delta_s: float) -> List[int]:
    """
    Local maxima above delta_s. t is a peak iff m[t] > m[t-1] and m[t] >= m[t+1];
    end positions only compare with the neighbor they have.
    """
    v = mask.values if isinstance(mask, SwitchMask) else np.asarray(mask, dtype=np.float64).reshape(-1)
    n = v.shape[0]
    peaks = []
    for t in range(n):
        if v[t] <= delta_s:
            continue
        if t > 0 and not v[t] > v[t - 1]:
            continue
        if t < n - 1 and not v[t] >= v[t + 1]:
            continue
        peaks.append(t)
    return peaks


def split_at(tracklet: Tracklet, positions: Sequence[int]) -> List[Tracklet]:
    """Position t ends a segment at index t; the next one starts at t + 1."""
    n = len(tracklet)
    prev = -1
    for p in positions:
        if not 0 <= p < n - 1:
            raise ValueError(f"split position {p} out of range for a tracklet of length {n}")
        if p <= prev:
            raise ValueError(f"split positions must be strictly increasing, got {list(positions)}")
        prev = p
    bounds = [0] + [p + 1 for p in positions] + [n]
    return [tracklet.slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]


# ----------------------------
# Grouping
# ----------------------------

def frame_gap(a: np.ndarray, b: np.ndarray) -> int:
    """Smallest |t_a - t_b| between two sorted frame arrays."""
    idx = np.searchsorted(b, a)
    lo = np.clip(idx - 1, 0, len(b) - 1)
    hi = np.clip(idx, 0, len(b) - 1)
    return int(np.minimum(np.abs(a - b[lo]), np.abs(a - b[hi])).min())


@dataclass(eq=False)
class TrackletGraph:
    vertices: List[Tracklet]
    delta_t: int
    edges: List[Tuple[int, int]] = field(default_factory=list)
    frame_sets: List[FrozenSet[int]] = field(default_factory=list)
    clusters: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not self.frame_sets:
            self.frame_sets = [frozenset(int(f) for f in t.frames) for t in self.vertices]
        self._adjacent: Set[Tuple[int, int]] = set(self.edges)

    def __len__(self) -> int:
        return len(self.vertices)

    def add_edge(self, u: int, w: int) -> None:
        edge = (min(u, w), max(u, w))
        if edge not in self._adjacent:
            self._adjacent.add(edge)
            self.edges.append(edge)

    def connected(self, u: int, w: int) -> bool:
        return (min(u, w), max(u, w)) in self._adjacent


def edge_allowed(a: Tracklet, b: Tracklet, delta_t: int) -> bool:
    """Frame sets disjoint and the closest frames at most delta_t apart."""
    if a.end + delta_t < b.start or b.end + delta_t < a.start:
        return False
    if np.intersect1d(a.frames, b.frames, assume_unique=True).size:
        return False
    return frame_gap(a.frames, b.frames) <= delta_t


def build_graph(tracklets: Sequence[Tracklet], delta_t: int) -> TrackletGraph:
    graph = TrackletGraph(vertices=list(tracklets), delta_t=delta_t)
    for u in range(len(tracklets)):
        for w in range(u + 1, len(tracklets)):
            if edge_allowed(tracklets[u], tracklets[w], delta_t):
                graph.add_edge(u, w)
    return graph


def _as_matrix(embeddings) -> np.ndarray:
    rows = [getattr(e, "h", e) for e in embeddings]
    if not rows:
        return np.zeros((0, 0))
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)


def ordered_edges(graph: TrackletGraph, embeddings, delta_c: float) -> List[Tuple[float, int, int]]:
    """Edges closer than delta_c, by (distance, earlier start frame, vertex indices)."""
    h = _as_matrix(embeddings)
    if h.shape[0] != len(graph):
        raise ShapeError(f"{h.shape[0]} embeddings for {len(graph)} vertices")
    keyed = []
    for u, w in graph.edges:
        d = float(np.linalg.norm(h[u] - h[w]))
        if d < delta_c:
            start = min(graph.vertices[u].start, graph.vertices[w].start)
            keyed.append(((d, start, u, w), u, w))
    keyed.sort(key=lambda k: k[0])
    return [(k[0], u, w) for k, u, w in keyed]


def relabel(roots: Sequence[int]) -> np.ndarray:
    """Cluster ids 0..k-1 in order of each cluster's first vertex."""
    seen: Dict[int, int] = {}
    out = np.empty(len(roots), dtype=np.int64)
    for v, r in enumerate(roots):
        out[v] = seen.setdefault(r, len(seen))
    return out


def greedy_group(graph: TrackletGraph, embeddings, delta_c: float) -> np.ndarray:
    """
    Bottom-up merging in ascending distance order. An edge joins its two
    clusters when its distance is below delta_c and every cross pair of the
    merged cluster is itself a graph edge: frame sets disjoint and at most
    delta_t frames apart.
    """
    n = len(graph)
    parent = list(range(n))
    members: Dict[int, List[int]] = {v: [v] for v in range(n)}

    def find(v: int) -> int:
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for dist, u, w in ordered_edges(graph, embeddings, delta_c):
        ru, rw = find(u), find(w)
        if ru == rw:
            continue
        small, big = (ru, rw) if len(members[ru]) <= len(members[rw]) else (rw, ru)
        if not all(graph.connected(a, b) for a in members[small] for b in members[big]):
            logger.debug("skip %d-%d (%.3f): clusters overlap or lie more than delta_t apart", u, w, dist)
            continue
        parent[small] = big
        members[big].extend(members.pop(small))
        logger.debug("merge %d-%d (%.3f)", u, w, dist)

    clusters = relabel([find(v) for v in range(n)])
    graph.clusters = clusters
    return clusters


# ----------------------------
# End to end
# ----------------------------

def tracklets_from_rows(rows: Sequence[MotRow], features: Dict[DetKey, np.ndarray]) -> List[Tracklet]:
    by_id: Dict[int, List[MotRow]] = {}
    for r in rows:
        by_id.setdefault(r.track_id, []).append(r)
    out = []
    for tid in sorted(by_id):
        rs = sorted(by_id[tid], key=lambda r: r.frame)
        cols = []
        for r in rs:
            vec = features.get(r.key)
            if vec is None:
                raise DataError(f"no feature for frame {r.frame}, row {r.index} (track {tid})")
            cols.append(vec)
        out.append(
            Tracklet(
                source_id=tid,
                frames=np.array([r.frame for r in rs]),
                boxes=np.stack([r.box for r in rs]),
                features=np.stack(cols, axis=1),
                det_keys=tuple(r.key for r in rs),
            )
        )
    return out


@dataclass(eq=False)
class BoostResult:
    segments: List[Tracklet]
    clusters: np.ndarray
    splits: int = 0
    merges: int = 0

    @property
    def n_tracks(self) -> int:
        return int(self.clusters.max()) + 1 if self.clusters.size else 0

    def id_map(self) -> Dict[DetKey, int]:
        """Output track id (1-based, ordered by first appearance) for every detection."""
        order = sorted(range(len(self.segments)), key=lambda i: (self.segments[i].start, i))
        new_id: Dict[int, int] = {}
        for i in order:
            new_id.setdefault(int(self.clusters[i]), len(new_id) + 1)
        return {k: new_id[int(self.clusters[i])] for i, seg in enumerate(self.segments) for k in seg.det_keys}


def boost_tracklets(
    tracklets: Sequence[Tracklet],
    splitter: Optional[SplitterModel],
    connector: Optional[ConnectorModel],
    cfg: PipelineConfig,
) -> BoostResult:
    if cfg.use_splitter and splitter is None:
        raise ConfigError("splitting is enabled but no splitter model was given")
    if cfg.use_connector and connector is None:
        raise ConfigError("connecting is enabled but no connector model was given")
    for model, name in ((splitter if cfg.use_splitter else None, "splitter"), (connector if cfg.use_connector else None, "connector")):
        if model is not None and tracklets and tracklets[0].features.shape[0] != model.cfg.feature_dim:
            raise ShapeError(
                f"features have {tracklets[0].features.shape[0]} rows, the {name} expects {model.cfg.feature_dim}"
            )

    segments: List[Tracklet] = []
    splits = 0
    for t in tracklets:
        if cfg.use_splitter and len(t) > 1:
            positions = pick_peaks(windowed_mask(t, splitter, cfg), cfg.delta_s)
            splits += len(positions)
            segments.extend(split_at(t, positions))
        else:
            segments.append(t)

    if cfg.use_connector and segments:
        embeddings = [connector.embed(s.features) for s in segments]
        graph = build_graph(segments, cfg.delta_t)
        clusters = greedy_group(graph, embeddings, cfg.delta_c)
    else:
        clusters = np.arange(len(segments), dtype=np.int64)

    merges = len(segments) - (int(clusters.max()) + 1 if clusters.size else 0)
    logger.info(
        "boost: %d tracklets -> %d segments (%d splits) -> %d tracks (%d merges)",
        len(tracklets), len(segments), splits, len(segments) - merges, merges,
    )
    return BoostResult(segments=segments, clusters=clusters, splits=splits, merges=merges)


def boost_rows(
    rows: Sequence[MotRow],
    features: Dict[DetKey, np.ndarray],
    splitter: Optional[SplitterModel],
    connector: Optional[ConnectorModel],
    cfg: PipelineConfig,
) -> List[MotRow]:
    """Same detections, new ids; every other column passes through untouched."""
    if not rows:
        return []
    result = boost_tracklets(tracklets_from_rows(rows, features), splitter, connector, cfg)
    ids = result.id_map()
    return [r.with_id(ids[r.key]) for r in rows]


def _load(kind, path: Optional[PathLike], name: str):
    if path is None:
        raise ConfigError(f"a {name} checkpoint is required unless --no-{name} is given")
    return kind.load(path)


def boost(
    input_path: PathLike,
    features_path: PathLike,
    splitter_path: Optional[PathLike],
    connector_path: Optional[PathLike],
    cfg: PipelineConfig,
    out_path: PathLike,
) -> List[MotRow]:
    rows = read_mot_rows(input_path)
    features = read_features(features_path) if rows else {}
    splitter = _load(SplitterModel, splitter_path, "splitter") if cfg.use_splitter and rows else None
    connector = _load(ConnectorModel, connector_path, "connector") if cfg.use_connector and rows else None
    out = boost_rows(rows, features, splitter, connector, cfg)
    write_mot(out_path, out)
    return out
