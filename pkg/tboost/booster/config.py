from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Union

import yaml

from .ablation import AblationConfig
from .connector import ConnectorConfig
from .corpus import CorpusConfig
from .detections import NoiseConfig
from .errors import ConfigError
from .iou_tracker import IouTrackerConfig
from .pipeline import PipelineConfig
from .scene import MotionConfig
from .splitter import SplitterConfig
from .train import TrainConfig

SECTIONS = {
    "scene": MotionConfig,
    "noise": NoiseConfig,
    "tracker": IouTrackerConfig,
    "corpus": CorpusConfig,
    "splitter": SplitterConfig,
    "connector": ConnectorConfig,
    "train_splitter": TrainConfig,
    "train_connector": TrainConfig,
    "pipeline": PipelineConfig,
    "ablation": AblationConfig,
}


def _connector_train_defaults() -> TrainConfig:
    return TrainConfig(lr=0.0005, iterations=3000)


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a run, one section per component."""

    seed: int = 0
    scene: MotionConfig = field(default_factory=MotionConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    tracker: IouTrackerConfig = field(default_factory=IouTrackerConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    splitter: SplitterConfig = field(default_factory=SplitterConfig)
    connector: ConnectorConfig = field(default_factory=ConnectorConfig)
    train_splitter: TrainConfig = field(default_factory=TrainConfig)
    train_connector: TrainConfig = field(default_factory=_connector_train_defaults)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        k = self.splitter.feature_dim
        if self.connector.feature_dim != k:
            raise ConfigError(f"connector.feature_dim {self.connector.feature_dim} != splitter.feature_dim {k}")
        if self.scene.appearance_dim < k - 4:
            raise ConfigError(f"scene.appearance_dim must be >= feature_dim - 4 = {k - 4}")

    # ----------------------------
    # (de)serialization
    # ----------------------------

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"seed": self.seed}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = {f.name: _plain(getattr(section, f.name)) for f in fields(section)}
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        if data is None:
            data = {}
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a mapping of sections")
        unknown = set(data) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")

        base = cls()
        kwargs: Dict[str, Any] = {}
        if "seed" in data:
            kwargs["seed"] = _as_int(data["seed"], "seed")
        for name, kind in SECTIONS.items():
            values = data.get(name)
            if values is None:
                continue
            if not isinstance(values, Mapping):
                raise ConfigError(f"section {name!r} must be a mapping")
            allowed = {f.name for f in fields(kind)}
            bad = set(values) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in {name}: {', '.join(sorted(bad))}")
            try:
                kwargs[name] = replace(getattr(base, name), **dict(values))
            except TypeError as e:
                raise ConfigError(f"bad value in {name}: {e}") from None
        try:
            return replace(base, **kwargs)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_yaml(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            with open(path, "r") as f:
                data = yaml.safe_load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from None
        return cls.from_dict(data)

    def to_yaml(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Apply dotted overrides such as {"pipeline.delta_s": 0.7}; string values are parsed as YAML scalars."""
        data = self.to_dict()
        for key, value in overrides.items():
            if isinstance(value, str):
                value = yaml.safe_load(value)
            if key == "seed":
                data["seed"] = value
                continue
            section, _, name = key.partition(".")
            if section not in SECTIONS or not name:
                raise ConfigError(f"override key must be 'section.name' or 'seed', got {key!r}")
            data[section][name] = value
        return RunConfig.from_dict(data)


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    return value


def _as_int(value: Any, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return value


def parse_override(text: str) -> tuple:
    """'section.key=value' -> (key, value string)."""
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    return key.strip(), value.strip()
