"""
Ablation sweeps on the held-out part of a synthetic corpus:

    modules     original tracker output vs +connector, +splitter, +both
    thresholds  IDF1 over a delta_s x delta_c grid
    smoothing   splitting AP of an adaptively smoothed splitter vs a hard-label one
    heads       connector retrained with k heads at a fixed channel budget
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from .connector import ConnectorModel, msa_param_count
from .corpus import SAMPLES_FILE, WINDOWS_FILE, load_samples, load_windows, read_split, sequence_name
from .errors import ConfigError, DataError
from .metrics import EvalReport, aggregate, evaluate, read_track_set, splitting_ap, track_set
from .mot_io import MotRow, read_features, read_mot_rows
from .pipeline import PipelineConfig, boost_rows
from .splitter import SplitterModel, splitter_forward
from .tensor import no_grad
from .train import ConnectorSample, SplitterWindow, TrainConfig, connector_holdout_satisfaction, train_connector

if TYPE_CHECKING:
    from .config import RunConfig

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
MODULE_ROWS = (("original", False, False), ("+connector", False, True), ("+splitter", True, False), ("+both", True, True))


@dataclass(frozen=True)
class AblationConfig:
    delta_s_grid: Tuple[float, ...] = (0.5, 0.7, 0.9)
    delta_c_grid: Tuple[float, ...] = (0.5, 0.7, 0.9, 1.1)
    heads: Tuple[int, ...] = (1, 2, 4, 8)
    heads_iterations: int = 300
    ap_tol: int = 3

    def __post_init__(self) -> None:
        for name in ("delta_s_grid", "delta_c_grid", "heads"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.delta_s_grid or not self.delta_c_grid:
            raise ConfigError("ablation threshold grids must not be empty")
        if any(h < 1 for h in self.heads):
            raise ConfigError(f"ablation.heads must be positive, got {self.heads}")
        if self.heads_iterations < 1:
            raise ConfigError("ablation.heads_iterations must be >= 1")
        if self.ap_tol < 0:
            raise ConfigError(f"ablation.ap_tol must be >= 0, got {self.ap_tol}")


@dataclass(eq=False)
class HeldOutSequence:
    name: str
    gt: Dict[int, Dict[int, np.ndarray]]
    rows: List[MotRow]
    features: Dict[Tuple[int, int], np.ndarray]


def load_sequences(corpus_dir: PathLike, indices: Sequence[int]) -> List[HeldOutSequence]:
    out = []
    for i in indices:
        d = Path(corpus_dir) / sequence_name(i)
        if not d.is_dir():
            raise DataError(f"{d} not found; run synth first")
        out.append(
            HeldOutSequence(
                name=d.name,
                gt=read_track_set(d / "gt.txt"),
                rows=read_mot_rows(d / "tracks.txt"),
                features=read_features(d / "feats.jsonl"),
            )
        )
    return out


def _score(
    sequences: Sequence[HeldOutSequence],
    splitter: Optional[SplitterModel],
    connector: Optional[ConnectorModel],
    cfg: PipelineConfig,
    boosted: bool = True,
) -> EvalReport:
    reports = []
    for seq in sequences:
        rows = boost_rows(seq.rows, seq.features, splitter, connector, cfg) if boosted else seq.rows
        reports.append(evaluate(seq.gt, track_set(rows)))
    return aggregate(reports)


def _row(setting: Dict[str, Any], report: EvalReport) -> Dict[str, Any]:
    r = report.to_dict()
    return {**setting, "idf1": r["idf1"], "mota": r["mota"], "ids": r["ids"], "frag": r["frag"], "fp": r["fp"], "fn": r["fn"]}


def module_ablation(
    sequences: Sequence[HeldOutSequence],
    splitter: SplitterModel,
    connector: ConnectorModel,
    cfg: PipelineConfig,
) -> List[Dict[str, Any]]:
    rows = []
    for name, use_s, use_c in MODULE_ROWS:
        run = replace(cfg, use_splitter=use_s, use_connector=use_c)
        report = _score(sequences, splitter, connector, run, boosted=use_s or use_c)
        rows.append(_row({"setting": name}, report))
        logger.info("module ablation %-10s idf1 %.4f mota %.4f", name, report.idf1, report.mota)
    return rows


def threshold_grid(
    sequences: Sequence[HeldOutSequence],
    splitter: SplitterModel,
    connector: ConnectorModel,
    cfg: PipelineConfig,
    ablation: AblationConfig,
    progress: bool = False,
) -> List[Dict[str, Any]]:
    cells = [(s, c) for s in ablation.delta_s_grid for c in ablation.delta_c_grid]
    rows = []
    for ds, dc in tqdm(cells, disable=not progress, desc="thresholds"):
        run = replace(cfg, delta_s=ds, delta_c=dc, use_splitter=True, use_connector=True)
        rows.append(_row({"delta_s": ds, "delta_c": dc}, _score(sequences, splitter, connector, run)))
    return rows


def window_ap(windows: Sequence[SplitterWindow], model: SplitterModel, tol: int, batch_size: int = 64) -> float:
    """Splitting AP over the real (unpadded) boundaries of each window."""
    predicted, truth = [], []
    with no_grad():
        for lo in range(0, len(windows), batch_size):
            chunk = windows[lo: lo + batch_size]
            m_hat = splitter_forward(np.stack([w.features for w in chunk]), model.cfg, model.params).m_hat.data
            for w, m in zip(chunk, m_hat):
                keep = w.valid > 0
                predicted.append(np.clip(m[keep].astype(np.float64), 0.0, 1.0))
                truth.append(w.m_star[keep])
    return splitting_ap(predicted, truth, tol)


def smoothing_comparison(
    windows: Sequence[SplitterWindow],
    adaptive: SplitterModel,
    baseline: SplitterModel,
    tol: int,
) -> List[Dict[str, Any]]:
    return [
        {"loss": adaptive.cfg.smoothing, "ap": window_ap(windows, adaptive, tol)},
        {"loss": baseline.cfg.smoothing, "ap": window_ap(windows, baseline, tol)},
    ]


def heads_sweep(
    train_samples: Sequence[ConnectorSample],
    holdout_samples: Sequence[ConnectorSample],
    base: ConnectorModel,
    train: TrainConfig,
    ablation: AblationConfig,
    seed: int,
    progress: bool = False,
) -> List[Dict[str, Any]]:
    rows = []
    budget = replace(train, iterations=ablation.heads_iterations)
    for k in ablation.heads:
        cfg = replace(base.cfg, heads=k, num_classes=0)
        result = train_connector(train_samples, cfg, budget, seed=seed, progress=progress)
        trained = result.config
        satisfaction = connector_holdout_satisfaction(holdout_samples, trained, result.params, seed=seed)
        rows.append(
            {
                "heads": k,
                "head_dim": trained.head_dim,
                "msa_params": sum(msa_param_count(result.params, i) for i in range(trained.layers)),
                "triplet_satisfaction": satisfaction,
                "final_loss": float(np.mean(result.losses[-10:])) if result.losses else None,
            }
        )
        if satisfaction is None:
            logger.warning("heads %d: held-out set cannot form triplets", k)
        else:
            logger.info("heads %d: triplet satisfaction %.4f", k, satisfaction)
    return rows


@dataclass
class AblationReport:
    modules: List[Dict[str, Any]] = field(default_factory=list)
    thresholds: List[Dict[str, Any]] = field(default_factory=list)
    smoothing: List[Dict[str, Any]] = field(default_factory=list)
    heads: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_markdown(self) -> str:
        parts = ["# Ablation", ""]
        parts += _table("Modules", ["setting", "idf1", "mota", "ids", "frag"], self.modules)
        parts += _table("Thresholds", ["delta_s", "delta_c", "idf1", "mota", "ids"], self.thresholds)
        parts += _table("Smoothing", ["loss", "ap"], self.smoothing)
        parts += _table("Heads", ["heads", "head_dim", "msa_params", "triplet_satisfaction"], self.heads)
        return "\n".join(parts)

    def write(self, out_dir: PathLike) -> Tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        md, js = out / "ablation.md", out / "ablation.json"
        md.write_text(self.to_markdown(), encoding="utf-8")
        with open(js, "w", encoding="utf-8", newline="\n") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return md, js


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _table(title: str, columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> List[str]:
    if not rows:
        return []
    lines = [f"## {title}", "", "| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    for r in rows:
        lines.append("| " + " | ".join(_fmt(r.get(c)) for c in columns) + " |")
    lines.append("")
    return lines


def run_ablation(
    corpus_dir: PathLike,
    splitter_path: PathLike,
    connector_path: PathLike,
    baseline_path: Optional[PathLike],
    cfg: "RunConfig",
    progress: bool = False,
) -> AblationReport:
    for p in (splitter_path, connector_path, baseline_path):
        if p is not None and not Path(p).exists():
            raise DataError(f"checkpoint {p} not found")
    split = read_split(corpus_dir)
    if not split["holdout"]:
        raise DataError("the corpus has no held-out sequences (corpus.n_train == corpus.n_sequences)")

    splitter = SplitterModel.load(splitter_path)
    connector = ConnectorModel.load(connector_path)
    sequences = load_sequences(corpus_dir, split["holdout"])

    report = AblationReport()
    report.modules = module_ablation(sequences, splitter, connector, cfg.pipeline)
    report.thresholds = threshold_grid(sequences, splitter, connector, cfg.pipeline, cfg.ablation, progress)

    if baseline_path is not None:
        windows = load_windows(Path(corpus_dir) / WINDOWS_FILE, split["holdout"])
        report.smoothing = smoothing_comparison(windows, splitter, SplitterModel.load(baseline_path), cfg.ablation.ap_tol)

    train_samples = load_samples(Path(corpus_dir) / SAMPLES_FILE, split["train"])
    holdout_samples = load_samples(Path(corpus_dir) / SAMPLES_FILE, split["holdout"])
    report.heads = heads_sweep(
        train_samples, holdout_samples, connector, cfg.train_connector, cfg.ablation, cfg.seed, progress
    )
    return report
