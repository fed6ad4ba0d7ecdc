from __future__ import annotations

from pathlib import Path

import pytest

from tboost.booster.config import RunConfig, parse_override
from tboost.booster.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"


def test_defaults_survive_yaml(tmp_path):
    cfg = RunConfig()
    cfg.to_yaml(tmp_path / "run.yaml")
    assert RunConfig.from_yaml(tmp_path / "run.yaml") == cfg
    assert cfg.train_connector.lr == 0.0005


def test_shipped_configs_load():
    desk = RunConfig.from_yaml(CONFIG_DIR / "desk.yaml")
    assert (desk.splitter.channels, desk.splitter.num_blocks, desk.connector.layers) == (32, 8, 2)
    assert desk.corpus.iou_thresholds == (0.3, 0.5, 0.7)
    full = RunConfig.from_yaml(CONFIG_DIR / "full.yaml")
    assert full.connector.model_dim == 512 and full.splitter.feature_dim == 2052
    assert full.train_connector.iterations == 120000


def test_partial_sections_keep_defaults():
    cfg = RunConfig.from_dict({"pipeline": {"delta_s": 0.7}})
    assert cfg.pipeline.delta_s == 0.7
    assert cfg.pipeline.delta_c == RunConfig().pipeline.delta_c
    assert RunConfig.from_dict(None) == RunConfig()


def test_overrides():
    cfg = RunConfig().with_overrides({"pipeline.delta_s": "0.7", "seed": "4", "splitter.dilations": "[1, 3]"})
    assert cfg.pipeline.delta_s == 0.7 and cfg.seed == 4
    assert cfg.splitter.dilations == (1, 3)
    assert RunConfig().with_overrides({"pipeline.use_splitter": False}).pipeline.use_splitter is False


@pytest.mark.parametrize(
    "data",
    [
        {"nonsense": {}},
        {"pipeline": {"delta_x": 1}},
        {"pipeline": [1, 2]},
        {"seed": True},
        {"seed": -1},
        {"connector": {"feature_dim": 10}},
        {"scene": {"appearance_dim": 8}},
        {"splitter": {"channels": 0}},
    ],
)
def test_bad_configs(data):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_bad_overrides_and_files(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"delta_s": "0.7"})
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"pipeline.delta_s": "2.0"})
    with pytest.raises(ConfigError):
        RunConfig.from_yaml(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("pipeline: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        RunConfig.from_yaml(broken)


def test_parse_override():
    assert parse_override(" pipeline.delta_s = 0.7 ") == ("pipeline.delta_s", "0.7")
    with pytest.raises(ConfigError):
        parse_override("pipeline.delta_s")
    with pytest.raises(ConfigError):
        parse_override("=3")
