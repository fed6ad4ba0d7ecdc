import os

# numpy picks its BLAS thread count at import time
for _var in ("OMP_NUM_THREADS", "MKL_NUM_THREADS", "OPENBLAS_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from tboost.booster.ablation import run_ablation
from tboost.booster.config import RunConfig, parse_override
from tboost.booster.connector import ConnectorModel
from tboost.booster.corpus import SAMPLES_FILE, WINDOWS_FILE, load_samples, load_windows, read_split, write_corpus
from tboost.booster.errors import BoosterError, DataError
from tboost.booster.metrics import evaluate, read_track_set
from tboost.booster.pipeline import boost
from tboost.booster.splitter import SMOOTHING_KINDS, SplitterModel
from tboost.booster.train import connector_holdout_satisfaction, splitter_holdout_loss, train_connector, train_splitter

logger = logging.getLogger("tboost")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tboost", description="tboost: tracklet splitting and reconnection")
    ap.add_argument("--config", help="Path to a run config YAML (defaults to built-in values)")
    ap.add_argument("--seed", type=int, help="Override the config seed")
    ap.add_argument("--out-dir", default="runs", help="Where outputs and the resolved config go")
    ap.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    ap.add_argument("--quiet", action="store_true", help="No progress bars")
    ap.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Config override such as pipeline.delta_s=0.7 (repeatable)",
    )

    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="Generate a synthetic training/evaluation corpus into --out-dir")

    ts = sub.add_parser("train-splitter", help="Train the switch-position network")
    ts.add_argument("--data", required=True, help="Corpus directory written by synth")
    ts.add_argument("--loss", choices=SMOOTHING_KINDS, help="Label smoothing used by the loss")
    ts.add_argument("--out", help="Checkpoint path (default: <out-dir>/splitter[_<loss>].tbst)")

    tc = sub.add_parser("train-connector", help="Train the tracklet embedding network")
    tc.add_argument("--data", required=True, help="Corpus directory written by synth")
    tc.add_argument("--heads", type=int, help="Attention heads")
    tc.add_argument("--out", help="Checkpoint path (default: <out-dir>/connector.tbst)")

    bo = sub.add_parser("boost", help="Split and reconnect the tracklets of one MOT result file")
    bo.add_argument("--input", required=True, help="MOT tracker output")
    bo.add_argument("--features", required=True, help="Per-detection feature sidecar (JSONL)")
    bo.add_argument("--splitter", help="Splitter checkpoint")
    bo.add_argument("--connector", help="Connector checkpoint")
    bo.add_argument("--delta-s", type=float)
    bo.add_argument("--delta-c", type=float)
    bo.add_argument("--delta-t", type=int)
    bo.add_argument("--out", help="Output MOT file (default: <out-dir>/boosted.txt)")
    bo.add_argument("--no-splitter", action="store_true", help="Skip splitting")
    bo.add_argument("--no-connector", action="store_true", help="Skip reconnection")

    ev = sub.add_parser("eval", help="Score a MOT result against ground truth")
    ev.add_argument("--gt", required=True)
    ev.add_argument("--pred", required=True)
    ev.add_argument("--report", help="Write the report as flat JSON")

    ab = sub.add_parser("ablate", help="Run the ablation sweeps on the held-out sequences")
    ab.add_argument("--data", required=True, help="Corpus directory written by synth")
    ab.add_argument("--splitter", required=True)
    ab.add_argument("--connector", required=True)
    ab.add_argument("--splitter-baseline", help="Hard-label splitter for the smoothing comparison")

    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    overrides: Dict[str, object] = dict(parse_override(s) for s in args.overrides)

    # dedicated flags win over --set
    if args.seed is not None:
        overrides["seed"] = args.seed
    cmd = args.command
    if cmd == "train-splitter" and args.loss:
        overrides["splitter.smoothing"] = args.loss
    if cmd == "train-connector" and args.heads is not None:
        overrides["connector.heads"] = args.heads
    if cmd == "boost":
        for flag, key in (("delta_s", "pipeline.delta_s"), ("delta_c", "pipeline.delta_c"), ("delta_t", "pipeline.delta_t")):
            if getattr(args, flag) is not None:
                overrides[key] = getattr(args, flag)
        if args.no_splitter:
            overrides["pipeline.use_splitter"] = False
        if args.no_connector:
            overrides["pipeline.use_connector"] = False
    return cfg.with_overrides(overrides) if overrides else cfg


def _split(data: Path) -> Dict[str, List[int]]:
    if not data.is_dir():
        raise DataError(f"corpus directory {data} not found; run synth first")
    return read_split(data)


# ----------------------------
# Subcommands
# ----------------------------

def cmd_synth(args: argparse.Namespace, cfg: RunConfig, out_dir: Path) -> None:
    summary = write_corpus(
        out_dir,
        cfg.seed,
        cfg.corpus,
        cfg.scene,
        cfg.noise,
        cfg.tracker,
        cfg.splitter.feature_dim,
        cfg.splitter.window,
        progress=not args.quiet,
    )
    print(f"Sequences: {summary.sequences} ({len(cfg.corpus.train_indices)} train, {len(cfg.corpus.holdout_indices)} held out)")
    print(f"Tracklets: {summary.tracklets:,}  with switches: {summary.tracklets_with_switch:,} ({summary.switch_fraction:.1%})")
    print(f"Switches:  {summary.switches:,}")
    print(f"Splitter windows: {summary.windows:,}  Connector tracklets: {summary.samples:,}")
    print(f"Corpus: {out_dir}")


def cmd_train_splitter(args: argparse.Namespace, cfg: RunConfig, out_dir: Path) -> None:
    data = Path(args.data)
    split = _split(data)
    windows = load_windows(data / WINDOWS_FILE, split["train"])
    result = train_splitter(windows, cfg.splitter, cfg.train_splitter, seed=cfg.seed, progress=not args.quiet)

    holdout = load_windows(data / WINDOWS_FILE, split["holdout"]) if split["holdout"] else []
    holdout_loss = splitter_holdout_loss(holdout, cfg.splitter, result.params) if holdout else None
    if holdout_loss is not None:
        logger.info("held-out splitter loss %.4f over %d windows", holdout_loss, len(holdout))

    suffix = "" if cfg.splitter.smoothing == "adaptive" else f"_{cfg.splitter.smoothing}"
    path = Path(args.out) if args.out else out_dir / f"splitter{suffix}.tbst"
    SplitterModel(cfg.splitter, result.params).save(path, seed=cfg.seed, iterations=cfg.train_splitter.iterations)

    print(f"Smoothing: {cfg.splitter.smoothing}")
    print(f"Windows:   {len(windows):,} train, {len(holdout):,} held out")
    if result.losses:
        print(f"Loss:      {result.losses[0]:.4f} -> {result.losses[-1]:.4f}")
    if holdout_loss is not None:
        print(f"Held-out loss: {holdout_loss:.4f}")
    print(f"Checkpoint: {path}")


def cmd_train_connector(args: argparse.Namespace, cfg: RunConfig, out_dir: Path) -> None:
    data = Path(args.data)
    split = _split(data)
    samples = load_samples(data / SAMPLES_FILE, split["train"])
    result = train_connector(samples, cfg.connector, cfg.train_connector, seed=cfg.seed, progress=not args.quiet)

    holdout = load_samples(data / SAMPLES_FILE, split["holdout"]) if split["holdout"] else []
    satisfaction = connector_holdout_satisfaction(holdout, result.config, result.params, seed=cfg.seed)
    if satisfaction is not None:
        logger.info("held-out triplet satisfaction %.4f", satisfaction)

    path = Path(args.out) if args.out else out_dir / "connector.tbst"
    ConnectorModel(result.config, result.params).save(path, seed=cfg.seed, iterations=cfg.train_connector.iterations)

    print(f"Heads:      {result.config.heads} x {result.config.head_dim}")
    print(f"Tracklets:  {len(samples):,} train ({result.config.num_classes} identities), {len(holdout):,} held out")
    if result.losses:
        print(f"Loss:       {result.losses[0]:.4f} -> {result.losses[-1]:.4f}")
    if satisfaction is not None:
        print(f"Held-out triplet satisfaction: {satisfaction:.2%}")
    print(f"Checkpoint: {path}")


def cmd_boost(args: argparse.Namespace, cfg: RunConfig, out_dir: Path) -> None:
    out = Path(args.out) if args.out else out_dir / "boosted.txt"
    rows = boost(args.input, args.features, args.splitter, args.connector, cfg.pipeline, out)
    tracks = {r.track_id for r in rows}
    p = cfg.pipeline
    print(f"Splitter: {'on' if p.use_splitter else 'off'} (delta_s={p.delta_s})  Connector: {'on' if p.use_connector else 'off'} (delta_c={p.delta_c}, delta_t={p.delta_t})")
    print(f"Detections: {len(rows):,}  Tracks out: {len(tracks):,}")
    print(f"Output: {out}")


def cmd_eval(args: argparse.Namespace, cfg: RunConfig, out_dir: Path) -> None:
    report = evaluate(read_track_set(args.gt), read_track_set(args.pred))
    print(f"IDF1: {report.idf1:.2%}  MOTA: {report.mota:.2%}")
    print(f"IDS: {report.ids}  FRAG: {report.frag}  FP: {report.fp}  FN: {report.fn}")
    print(f"MT: {report.mt}  ML: {report.ml}  GT tracks: {report.gt_tracks}")
    if args.report:
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        print(f"Report: {path}")


def cmd_ablate(args: argparse.Namespace, cfg: RunConfig, out_dir: Path) -> None:
    report = run_ablation(args.data, args.splitter, args.connector, args.splitter_baseline, cfg, progress=not args.quiet)
    md, js = report.write(out_dir)
    print(report.to_markdown())
    print(f"Tables: {md}, {js}")


COMMANDS = {
    "synth": cmd_synth,
    "train-splitter": cmd_train_splitter,
    "train-connector": cmd_train_connector,
    "boost": cmd_boost,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        cfg = resolve_config(args)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.to_yaml(out_dir / "config.yaml")
        COMMANDS[args.command](args, cfg, out_dir)
    except (BoosterError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
