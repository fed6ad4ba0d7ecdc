from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

import pytest

from tboost.booster.ablation import (
    AblationConfig,
    AblationReport,
    heads_sweep,
    load_sequences,
    module_ablation,
    run_ablation,
    smoothing_comparison,
    threshold_grid,
    window_ap,
)
from tboost.booster.config import RunConfig
from tboost.booster.connector import ConnectorModel, init_connector
from tboost.booster.corpus import SAMPLES_FILE, WINDOWS_FILE, load_samples, load_windows, read_split, write_corpus
from tboost.booster.errors import ConfigError, DataError
from tboost.booster.metrics import evaluate, track_set
from tboost.booster.splitter import SplitterModel, init_splitter
from tboost.booster.train import train_connector, train_splitter

SMALL = RunConfig.from_dict(
    {
        "corpus": {"n_sequences": 2, "n_train": 1, "n_identities": 4, "length": 60},
        "splitter": {"feature_dim": 8, "channels": 3, "num_blocks": 2, "window": 9, "dilations": [1, 2]},
        "connector": {"feature_dim": 8, "layers": 1, "heads": 2, "model_dim": 8, "window": 8},
        "train_connector": {"identities_per_batch": 2, "samples_per_identity": 2, "crop_len": 8},
        "pipeline": {"window": 9},
        "ablation": {"heads": [1, 2], "heads_iterations": 2},
    }
)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ablation")
    c = SMALL
    write_corpus(out, c.seed, c.corpus, c.scene, c.noise, c.tracker, c.splitter.feature_dim, c.splitter.window)
    return out


def models(smoothing: str = "adaptive"):
    s_cfg = replace(SMALL.splitter, smoothing=smoothing)
    return SplitterModel(s_cfg, init_splitter(s_cfg, seed=0)), ConnectorModel(SMALL.connector, init_connector(SMALL.connector, seed=0))


def test_module_rows(corpus_dir):
    seqs = load_sequences(corpus_dir, [1])
    splitter, connector = models()
    rows = module_ablation(seqs, splitter, connector, SMALL.pipeline)
    assert [r["setting"] for r in rows] == ["original", "+connector", "+splitter", "+both"]
    raw = evaluate(seqs[0].gt, track_set(seqs[0].rows))
    assert rows[0]["idf1"] == pytest.approx(raw.idf1)
    assert rows[0]["ids"] == raw.ids
    assert all(0.0 <= r["idf1"] <= 1.0 for r in rows)


def test_threshold_grid_shape(corpus_dir):
    seqs = load_sequences(corpus_dir, [1])
    splitter, connector = models()
    rows = threshold_grid(seqs, splitter, connector, SMALL.pipeline, AblationConfig())
    assert len(rows) == 12
    assert {(r["delta_s"], r["delta_c"]) for r in rows} == {
        (s, c) for s in (0.5, 0.7, 0.9) for c in (0.5, 0.7, 0.9, 1.1)
    }


def test_smoothing_rows(corpus_dir):
    windows = load_windows(corpus_dir / WINDOWS_FILE, [1])
    adaptive, _ = models()
    hard, _ = models("hard")
    rows = smoothing_comparison(windows, adaptive, hard, tol=3)
    assert [r["loss"] for r in rows] == ["adaptive", "hard"]
    assert all(0.0 <= r["ap"] <= 1.0 for r in rows)
    assert window_ap(windows, adaptive, 3) == rows[0]["ap"]


def test_heads_keep_the_attention_budget(corpus_dir):
    train = load_samples(corpus_dir / SAMPLES_FILE, [0])
    held = load_samples(corpus_dir / SAMPLES_FILE, [1])
    _, connector = models()
    rows = heads_sweep(train, held, connector, SMALL.train_connector, AblationConfig(heads=(1, 2, 4), heads_iterations=2), seed=0)
    assert [r["heads"] for r in rows] == [1, 2, 4]
    assert [r["head_dim"] for r in rows] == [8, 4, 2]
    assert len({r["msa_params"] for r in rows}) == 1
    for r in rows:
        assert r["triplet_satisfaction"] is None or 0.0 <= r["triplet_satisfaction"] <= 1.0


def test_report_files(tmp_path):
    report = AblationReport(
        modules=[{"setting": "original", "idf1": 0.5, "mota": 0.25, "ids": 3, "frag": 1}],
        heads=[{"heads": 2, "head_dim": 4, "msa_params": 256, "triplet_satisfaction": None}],
    )
    md, js = report.write(tmp_path / "out")
    text = md.read_text(encoding="utf-8")
    assert "## Modules" in text and "| original | 0.5000 | 0.2500 | 3 | 1 |" in text
    assert "## Thresholds" not in text
    assert json.loads(js.read_text(encoding="utf-8"))["heads"][0]["msa_params"] == 256


def test_run_ablation(corpus_dir, tmp_path):
    splitter, connector = models()
    splitter.save(tmp_path / "s.tbst")
    connector.save(tmp_path / "c.tbst")
    report = run_ablation(corpus_dir, tmp_path / "s.tbst", tmp_path / "c.tbst", None, SMALL)
    assert len(report.modules) == 4 and len(report.thresholds) == 12
    assert report.smoothing == []
    assert [r["heads"] for r in report.heads] == [1, 2]

    with pytest.raises(DataError, match="not found"):
        run_ablation(corpus_dir, tmp_path / "nope.tbst", tmp_path / "c.tbst", None, SMALL)


def test_ablation_config_validation():
    with pytest.raises(ConfigError):
        AblationConfig(delta_s_grid=())
    with pytest.raises(ConfigError):
        AblationConfig(heads=(0, 2))
    assert AblationConfig(heads=[1, 2]).heads == (1, 2)


DESK = RunConfig.from_yaml(Path(__file__).resolve().parents[1] / "config" / "desk.yaml")
DESK_SEEDS = (0, 1, 2)


def desk_run(out: Path, seed: int) -> dict:
    """Synthesize a desk-scale corpus, train both splitters and the connector, score the held-out part."""
    cfg = DESK.with_overrides({"seed": seed})
    write_corpus(out, cfg.seed, cfg.corpus, cfg.scene, cfg.noise, cfg.tracker, cfg.splitter.feature_dim, cfg.splitter.window)
    split = read_split(out)
    windows = load_windows(out / WINDOWS_FILE, split["train"])
    hard_cfg = replace(cfg.splitter, smoothing="hard")
    splitter = SplitterModel(cfg.splitter, train_splitter(windows, cfg.splitter, cfg.train_splitter, seed=seed).params)
    hard = SplitterModel(hard_cfg, train_splitter(windows, hard_cfg, cfg.train_splitter, seed=seed).params)
    trained = train_connector(load_samples(out / SAMPLES_FILE, split["train"]), cfg.connector, cfg.train_connector, seed=seed)
    connector = ConnectorModel(trained.config, trained.params)

    seqs = load_sequences(out, split["holdout"])
    held_windows = load_windows(out / WINDOWS_FILE, split["holdout"])
    return {
        "modules": module_ablation(seqs, splitter, connector, cfg.pipeline),
        "grid": threshold_grid(seqs, splitter, connector, cfg.pipeline, cfg.ablation),
        "smoothing": smoothing_comparison(held_windows, splitter, hard, cfg.ablation.ap_tol),
    }


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    return [desk_run(tmp_path_factory.mktemp(f"desk{seed}"), seed) for seed in DESK_SEEDS]


def mean_over_runs(runs, table: str, key: str) -> np.ndarray:
    return np.mean([[row[key] for row in run[table]] for run in runs], axis=0)


@pytest.mark.slow
def test_adaptive_smoothing_beats_hard_labels(desk_runs):
    adaptive, hard = mean_over_runs(desk_runs, "smoothing", "ap")
    assert adaptive - hard >= 0.03


@pytest.mark.slow
def test_both_modules_beat_connector_beats_original(desk_runs):
    original, connector_only, _, both = mean_over_runs(desk_runs, "modules", "idf1")
    assert both > connector_only > original
    mota = mean_over_runs(desk_runs, "modules", "mota")
    assert np.ptp(mota) < 0.01


@pytest.mark.slow
def test_every_threshold_cell_beats_original(desk_runs):
    original = mean_over_runs(desk_runs, "modules", "idf1")[0]
    cells = mean_over_runs(desk_runs, "grid", "idf1")
    assert len(cells) == 12
    assert np.all(cells >= original)
