from __future__ import annotations

import time

import numpy as np
import pytest

from tboost.booster.connector import ConnectorConfig, ConnectorModel, init_connector
from tboost.booster.corpus import CorpusConfig, synthesize_sequence, tracklet_rows
from tboost.booster.detections import NoiseConfig
from tboost.booster.errors import ConfigError, DataError, ShapeError
from tboost.booster.iou_tracker import IouTrackerConfig
from tboost.booster.mot_io import make_row, read_mot_rows, write_features, write_mot
from tboost.booster.pipeline import (
    PipelineConfig,
    boost,
    boost_rows,
    boost_tracklets,
    build_graph,
    edge_allowed,
    frame_gap,
    greedy_group,
    ordered_edges,
    pick_peaks,
    split_at,
    tracklets_from_rows,
    windowed_mask,
)
from tboost.booster.scene import MotionConfig
from tboost.booster.splitter import SplitterConfig, SplitterModel, init_splitter
from tboost.booster.tracklet import Tracklet, concat_tracklets

K = 6
CONNECTOR = ConnectorConfig(feature_dim=K, layers=2, heads=2, model_dim=8, window=8)
SPLITTER = SplitterConfig(feature_dim=K, channels=3, num_blocks=2, window=9, dilations=(1, 2))


def span(lo: int, hi: int, source_id: int = 0) -> Tracklet:
    frames = np.arange(lo, hi + 1)
    return Tracklet(source_id=source_id, frames=frames, boxes=np.zeros((len(frames), 4)))


def connector() -> ConnectorModel:
    return ConnectorModel(CONNECTOR, init_connector(CONNECTOR, seed=0))


def always_split() -> SplitterModel:
    params = init_splitter(SPLITTER, seed=0)
    params["head_mask.w"].data[...] = 0.0
    params["head_mask.b"].data[...] = 10.0
    return SplitterModel(SPLITTER, params)


def test_pick_peaks():
    assert pick_peaks(np.array([0.1, 0.6, 0.2]), 0.5) == [1]
    assert pick_peaks(np.array([0.7, 0.7, 0.1]), 0.5) == [0]
    assert pick_peaks(np.array([0.2, 0.9, 0.3, 0.8]), 0.5) == [1, 3]
    assert pick_peaks(np.array([0.5, 0.4]), 0.5) == []
    assert pick_peaks(np.zeros(0), 0.5) == []


def test_split_at():
    t = span(0, 4)
    assert [list(p.frames) for p in split_at(t, [1])] == [[0, 1], [2, 3, 4]]
    assert [len(p) for p in split_at(span(0, 9), [2, 6])] == [3, 4, 3]
    assert split_at(t, [])[0] is not None
    with pytest.raises(ValueError):
        split_at(t, [4])
    with pytest.raises(ValueError):
        split_at(t, [2, 1])


def test_frame_gap_and_edges():
    assert frame_gap(np.array([0, 5, 10]), np.array([3, 12])) == 2
    a = span(0, 10)
    assert edge_allowed(a, span(12, 20), 64)
    assert not edge_allowed(a, span(5, 20), 64)
    assert not edge_allowed(a, span(100, 110), 64)
    assert not edge_allowed(a, span(20, 30), 5)
    graph = build_graph([a, span(12, 20), span(5, 20), span(100, 110)], 64)
    assert graph.edges == [(0, 1)]
    assert graph.connected(1, 0) and not graph.connected(1, 2)


def test_ordered_edges_tiebreak():
    tracklets = [span(30, 35), span(40, 45), span(0, 5), span(10, 15)]
    h = np.eye(4)[[0, 0, 1, 1]]
    graph = build_graph(tracklets, 64)
    edges = ordered_edges(graph, h, 0.5)
    assert [(u, w) for _, u, w in edges] == [(2, 3), (0, 1)]
    with pytest.raises(ShapeError):
        ordered_edges(graph, h[:2], 0.5)


def test_ordered_edges_lists_close_edges_by_distance():
    tracklets = [span(0, 10), span(12, 20), span(22, 30)]
    h = np.array([[0.0, 0.0], [0.3, 0.0], [0.1, 0.0]])
    edges = ordered_edges(build_graph(tracklets, 64), h, 0.25)
    assert [(u, w) for _, u, w in edges] == [(0, 2), (1, 2)]
    assert [d for d, _, _ in edges] == pytest.approx([0.1, 0.2])
    assert ordered_edges(build_graph(tracklets, 64), h, 0.05) == []


def test_ordered_edges_breaks_full_ties_by_index():
    # 1 and 2 overlap, so both edges start at frame 0 and lie 0.1 away
    tracklets = [span(0, 5), span(10, 15), span(10, 15)]
    h = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]])
    edges = ordered_edges(build_graph(tracklets, 64), h, 0.5)
    assert edges == [(pytest.approx(0.1), 0, 1), (pytest.approx(0.1), 0, 2)]


def test_greedy_group_keeps_clusters_disjoint():
    # 0 and 2 overlap in time; both are close to 1
    tracklets = [span(0, 10), span(12, 20), span(5, 11)]
    h = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    assert list(greedy_group(build_graph(tracklets, 64), h, 0.5)) == [0, 0, 1]


def test_greedy_group_respects_distance():
    tracklets = [span(0, 10), span(12, 20)]
    h = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert list(greedy_group(build_graph(tracklets, 64), h, 1.0)) == [0, 1]
    assert list(greedy_group(build_graph(tracklets, 64), h, 1.5)) == [0, 0]


def test_greedy_group_keeps_every_pair_within_delta_t():
    # 1-2 and 0-1 are edges, 0-2 is 70 frames apart
    tracklets = [span(0, 10), span(12, 20), span(80, 90)]
    h = np.ones((3, 2)) / np.sqrt(2)
    clusters = greedy_group(build_graph(tracklets, 64), h, 0.5)
    assert list(clusters) == [0, 0, 1]
    assert list(greedy_group(build_graph(tracklets, 70), h, 0.5)) == [0, 0, 0]


def test_pipeline_config():
    assert PipelineConfig().stride == 32
    for bad in (dict(delta_s=1.0), dict(delta_c=0.0), dict(delta_t=0), dict(overlap=1.0)):
        with pytest.raises(ConfigError):
            PipelineConfig(**bad)


def test_windowed_mask_covers_long_tracklets(rng):
    t = Tracklet(source_id=1, frames=np.arange(30), boxes=np.zeros((30, 4)), features=rng.normal(size=(K, 30)))
    splitter = SplitterModel(SPLITTER, init_splitter(SPLITTER, seed=1))
    mask = windowed_mask(t, splitter, PipelineConfig(window=9))
    assert len(mask) == 29
    assert np.all((mask.values > 0) & (mask.values < 1))
    single = Tracklet(source_id=2, frames=[0], boxes=np.zeros((1, 4)), features=rng.normal(size=(K, 1)))
    assert len(windowed_mask(single, splitter, PipelineConfig(window=9))) == 0


def shared_feature_rows(rng):
    """Tracks 1 (frames 1-5), 2 (8-12) and 3 (1-5) with identical feature matrices."""
    feats = rng.normal(size=(K, 5)).astype(np.float32)
    rows, sidecar = [], {}
    for frame in range(1, 13):
        index = 0
        for tid, start in ((1, 1), (3, 1), (2, 8)):
            if start <= frame < start + 5:
                rows.append(make_row(frame, tid, (10.0 * tid, 0.0, 5.0, 5.0), index=index))
                sidecar[(frame, index)] = feats[:, frame - start]
                index += 1
    return rows, sidecar


def test_boost_rows_reconnects_matching_tracks(rng):
    rows, sidecar = shared_feature_rows(rng)
    cfg = PipelineConfig(use_splitter=False, delta_c=0.5)
    out = boost_rows(rows, sidecar, None, connector(), cfg)
    ids = {(r.frame, r.track_id): new.track_id for r, new in zip(rows, out)}
    assert {v for (f, tid), v in ids.items() if tid in (1, 2)} == {1}
    assert {v for (f, tid), v in ids.items() if tid == 3} == {2}
    assert [r.tokens for r in out] == [r.tokens for r in rows]


def test_splitting_only(rng):
    rows, sidecar = shared_feature_rows(rng)
    tracklets = tracklets_from_rows(rows, sidecar)
    result = boost_tracklets(tracklets, always_split(), None, PipelineConfig(use_connector=False, window=9))
    assert result.splits == 3
    assert [len(s) for s in result.segments] == [1, 4, 1, 4, 1, 4]
    assert result.n_tracks == 6 and result.merges == 0


def test_boost_requires_models(rng):
    rows, sidecar = shared_feature_rows(rng)
    tracklets = tracklets_from_rows(rows, sidecar)
    with pytest.raises(ConfigError):
        boost_tracklets(tracklets, None, connector(), PipelineConfig())
    with pytest.raises(ConfigError):
        boost_tracklets(tracklets, None, None, PipelineConfig(use_splitter=False))
    wide = ConnectorConfig(feature_dim=K + 1, layers=1, heads=2, model_dim=8)
    with pytest.raises(ShapeError):
        boost_tracklets(tracklets, None, ConnectorModel(wide, init_connector(wide, 0)), PipelineConfig(use_splitter=False))


def test_missing_feature_is_an_error(rng):
    rows, sidecar = shared_feature_rows(rng)
    del sidecar[(3, 1)]
    with pytest.raises(DataError, match="no feature"):
        tracklets_from_rows(rows, sidecar)


def test_boost_files(tmp_path, rng):
    rows, sidecar = shared_feature_rows(rng)
    write_mot(tmp_path / "tracks.txt", rows)
    write_features(tmp_path / "feats.jsonl", sidecar)
    connector().save(tmp_path / "connector.tbst")
    cfg = PipelineConfig(use_splitter=False, delta_c=0.5)
    out = boost(tmp_path / "tracks.txt", tmp_path / "feats.jsonl", None, tmp_path / "connector.tbst", cfg, tmp_path / "b.txt")
    assert len({r.track_id for r in out}) == 2
    assert len(read_mot_rows(tmp_path / "b.txt")) == len(rows)

    with pytest.raises(ConfigError):
        boost(tmp_path / "tracks.txt", tmp_path / "feats.jsonl", None, None, cfg, tmp_path / "c.txt")

    (tmp_path / "empty.txt").write_text("", encoding="utf-8")
    assert boost(tmp_path / "empty.txt", tmp_path / "missing.jsonl", None, None, PipelineConfig(), tmp_path / "e.txt") == []
    assert (tmp_path / "e.txt").read_text(encoding="utf-8") == ""


def check_boost_invariants(seed: int) -> None:
    corpus = CorpusConfig(n_sequences=1, n_train=0, n_identities=5, length=80)
    seq = synthesize_sequence(seed, 0, corpus, MotionConfig(), NoiseConfig(), IouTrackerConfig(), K)
    rows, sidecar = tracklet_rows(seq.tracklets)
    splitter = SplitterModel(SPLITTER, init_splitter(SPLITTER, seed))
    cfg = PipelineConfig(window=9, delta_s=0.3, delta_c=1.1)

    tracklets = tracklets_from_rows(rows, sidecar)
    for t in tracklets:
        pieces = split_at(t, pick_peaks(windowed_mask(t, splitter, cfg), cfg.delta_s))
        whole = concat_tracklets(pieces)
        assert list(whole.frames) == list(t.frames) and whole.det_keys == t.det_keys

    result = boost_tracklets(tracklets, splitter, connector(), cfg)
    for c in range(result.n_tracks):
        frames = [f for seg, k in zip(result.segments, result.clusters) if k == c for f in seg.frames.tolist()]
        assert len(frames) == len(set(frames))
        members = [seg for seg, k in zip(result.segments, result.clusters) if k == c]
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                assert frame_gap(a.frames, b.frames) <= cfg.delta_t

    out = boost_rows(rows, sidecar, splitter, connector(), cfg)
    ids = [(r.frame, r.track_id) for r in out]
    assert len(ids) == len(set(ids))
    assert sorted((r.frame, r.index, r.tokens) for r in out) == sorted((r.frame, r.index, r.tokens) for r in rows)


@pytest.mark.parametrize("seed", range(5))
def test_boost_output_is_valid(seed):
    check_boost_invariants(seed)


@pytest.mark.slow
def test_boost_output_is_valid_on_many_corpora():
    for seed in range(5, 105):
        check_boost_invariants(seed)


@pytest.mark.slow
def test_boost_time_grows_at_most_quadratically(rng):
    model = connector()
    cfg = PipelineConfig(use_splitter=False, delta_c=1.1)
    sizes = (50, 100, 200)
    times = []
    for m in sizes:
        starts = rng.integers(0, 400, size=m)
        tracklets = [
            Tracklet(source_id=i + 1, frames=np.arange(s, s + 10), boxes=np.zeros((10, 4)), features=rng.normal(size=(K, 10)))
            for i, s in enumerate(starts)
        ]
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            boost_tracklets(tracklets, None, model, cfg)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    slope = np.polyfit(np.log(sizes), np.log(times), 1)[0]
    assert slope <= 2.3
