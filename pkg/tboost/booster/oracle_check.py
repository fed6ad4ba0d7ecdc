#!/usr/bin/env python3
"""
oracle_check.py

A deterministic harness comparing the fast paths against brute force on
random small instances:

  iou       box overlap vs counting unit cells of rasterized integer boxes
  idf1      motmetrics identity matching vs enumerating every identity matching
  peaks     peak picking vs the padded-neighbor definition
  grouping  union-find greedy grouping vs a list-of-sets replay on 3 vertices

Run:
  python -m tboost.booster.oracle_check [--count 1000] [--seed 0]
"""

from __future__ import annotations

import argparse
import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .metrics import TrackSet, idf1
from .pipeline import build_graph, greedy_group, pick_peaks
from .iou_tracker import iou
from .tracklet import Tracklet

GRID = 24


# --------- oracles ---------

def raster_iou(a: Sequence[int], b: Sequence[int]) -> float:
    grid_a = np.zeros((GRID, GRID), dtype=bool)
    grid_b = np.zeros((GRID, GRID), dtype=bool)
    grid_a[a[1]: a[1] + a[3], a[0]: a[0] + a[2]] = True
    grid_b[b[1]: b[1] + b[3], b[0]: b[0] + b[2]] = True
    inter = int(np.count_nonzero(grid_a & grid_b))
    union = int(np.count_nonzero(grid_a | grid_b))
    return inter / union if union else 0.0


def brute_idf1(gt: TrackSet, pred: TrackSet) -> float:
    g_ids, p_ids = sorted(gt), sorted(pred)
    n_gt = sum(len(v) for v in gt.values())
    n_pred = sum(len(v) for v in pred.values())
    overlap = {}
    for g in g_ids:
        for p in p_ids:
            overlap[(g, p)] = sum(1 for f, box in gt[g].items() if f in pred[p] and iou(box, pred[p][f]) >= 0.5)

    best = 0
    slots = p_ids + [None] * len(g_ids)
    for choice in itertools.permutations(slots, len(g_ids)):
        best = max(best, sum(overlap[(g, p)] for g, p in zip(g_ids, choice) if p is not None))
    denom = n_gt + n_pred
    return 2 * best / denom if denom else 0.0


def brute_peaks(values: Sequence[float], delta_s: float) -> List[int]:
    padded = [-np.inf, *values, -np.inf]
    return [t - 1 for t in range(1, len(padded) - 1) if padded[t] > padded[t - 1] and padded[t] >= padded[t + 1] and padded[t] > delta_s]


def replay_grouping(tracklets: Sequence[Tracklet], h: np.ndarray, delta_t: int, delta_c: float) -> List[frozenset]:
    def compatible(a: Tracklet, b: Tracklet) -> bool:
        fa, fb = set(a.frames.tolist()), set(b.frames.tolist())
        gap = min(abs(x - y) for x in fa for y in fb)
        return not (fa & fb) and gap <= delta_t

    n = len(tracklets)
    edges = []
    for u, w in itertools.combinations(range(n), 2):
        d = float(np.linalg.norm(h[u] - h[w]))
        if compatible(tracklets[u], tracklets[w]) and d < delta_c:
            edges.append(((d, min(tracklets[u].start, tracklets[w].start), u, w), u, w))
    edges.sort(key=lambda e: e[0])

    clusters: List[set] = [{v} for v in range(n)]
    for _, u, w in edges:
        cu = next(c for c in clusters if u in c)
        cw = next(c for c in clusters if w in c)
        if cu is cw:
            continue
        if not all(compatible(tracklets[a], tracklets[b]) for a in cu for b in cw):
            continue
        clusters.remove(cw)
        cu |= cw
    return sorted(frozenset(c) for c in clusters)


def partition(labels: np.ndarray) -> List[frozenset]:
    groups: Dict[int, set] = {}
    for v, c in enumerate(labels.tolist()):
        groups.setdefault(c, set()).add(v)
    return sorted(frozenset(g) for g in groups.values())


# --------- random instances ---------

def random_box(rng: np.random.Generator) -> Tuple[int, int, int, int]:
    w, h = (int(v) for v in rng.integers(0, 10, size=2))
    x, y = (int(v) for v in rng.integers(0, GRID - 10, size=2))
    return x, y, w, h


def random_tracks(rng: np.random.Generator, max_ids: int, frames: int, base: Optional[TrackSet] = None) -> TrackSet:
    tracks: TrackSet = {}
    for tid in range(1, int(rng.integers(0, max_ids + 1)) + 1):
        boxes = {}
        for f in range(frames):
            if rng.random() < 0.6:
                if base and rng.random() < 0.7:
                    src = base[int(rng.choice(sorted(base)))]
                    if f in src:
                        boxes[f] = src[f] + rng.integers(-1, 2, size=4) * np.array([1, 1, 0, 0])
                        continue
                boxes[f] = np.array(random_box(rng), dtype=np.float64) + np.array([0, 0, 1, 1])
        if boxes:
            tracks[tid] = boxes
    return tracks


def random_tracklet(rng: np.random.Generator, source_id: int) -> Tracklet:
    start = int(rng.integers(0, 20))
    length = int(rng.integers(1, 8))
    frames = np.sort(rng.choice(np.arange(start, start + 2 * length), size=length, replace=False))
    return Tracklet(source_id=source_id, frames=frames, boxes=np.zeros((length, 4)))


# --------- checks ---------

@dataclass
class Outcome:
    name: str
    checked: int = 0
    failures: List[str] = field(default_factory=list)


def check_iou(rng: np.random.Generator, count: int) -> Outcome:
    out = Outcome("iou")
    for _ in range(count):
        a, b = random_box(rng), random_box(rng)
        got, exp = iou(a, b), raster_iou(a, b)
        out.checked += 1
        if got != exp:
            out.failures.append(f"iou({a}, {b}) = {got}, raster {exp}")
    return out


def check_idf1(rng: np.random.Generator, count: int) -> Outcome:
    out = Outcome("idf1")
    for _ in range(count):
        gt = random_tracks(rng, 4, 6)
        pred = random_tracks(rng, 4, 6, base=gt)
        got, exp = idf1(gt, pred), brute_idf1(gt, pred)
        out.checked += 1
        if abs(got - exp) > 1e-12:
            out.failures.append(f"idf1 {got} != brute force {exp} ({len(gt)} gt, {len(pred)} pred ids)")
    return out


def check_peaks(rng: np.random.Generator, count: int) -> Outcome:
    out = Outcome("peaks")
    levels = np.array([0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0])
    for _ in range(count):
        values = rng.choice(levels, size=int(rng.integers(1, 12))).tolist()
        delta_s = float(rng.choice([0.3, 0.5, 0.7]))
        got, exp = pick_peaks(np.array(values), delta_s), brute_peaks(values, delta_s)
        out.checked += 1
        if got != exp:
            out.failures.append(f"peaks({values}, {delta_s}) = {got}, expected {exp}")
    return out


def check_grouping(rng: np.random.Generator, count: int) -> Outcome:
    out = Outcome("grouping")
    for _ in range(count):
        tracklets = [random_tracklet(rng, i) for i in range(3)]
        h = rng.normal(size=(3, 2))
        h /= np.linalg.norm(h, axis=1, keepdims=True)
        delta_t = int(rng.integers(1, 10))
        delta_c = float(rng.uniform(0.3, 2.0))
        got = partition(greedy_group(build_graph(tracklets, delta_t), h, delta_c))
        exp = replay_grouping(tracklets, h, delta_t, delta_c)
        out.checked += 1
        if got != exp:
            frames = [t.frames.tolist() for t in tracklets]
            out.failures.append(f"grouping {got} != replay {exp} (frames {frames}, dt {delta_t}, dc {delta_c:.3f})")
    return out


CHECKS: Dict[str, Callable[[np.random.Generator, int], Outcome]] = {
    "iou": check_iou,
    "idf1": check_idf1,
    "peaks": check_peaks,
    "grouping": check_grouping,
}


def run(count: int = 1000, seed: int = 0, verbose: bool = True) -> int:
    fails = 0
    for i, (name, check) in enumerate(CHECKS.items()):
        outcome = check(np.random.default_rng([seed, i]), count)
        fails += len(outcome.failures)
        if verbose:
            for msg in outcome.failures[:5]:
                print(f"FAIL {name}: {msg}")
            status = "ok  " if not outcome.failures else "FAIL"
            print(f"{status} {name:9s} {outcome.checked - len(outcome.failures)}/{outcome.checked} agree")

    if verbose:
        print(f"\nSummary: {'all oracles agree' if not fails else f'{fails} mismatches'}")
    return 1 if fails else 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(description="Brute-force oracle checks")
    ap.add_argument("--count", type=int, default=1000, help="Random instances per check")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    return run(args.count, args.seed)


if __name__ == "__main__":
    raise SystemExit(main())
