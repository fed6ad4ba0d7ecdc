"""
MOTChallenge text files and the per-detection feature sidecar.

Rows are `frame,id,x,y,w,h,conf,...`; the tokens after `id` are kept as read
so a row whose id is rewritten serializes back byte-for-byte otherwise.
The feature sidecar is JSONL, one object per detection:
`{"frame": f, "index": i, "feature": [...]}` where `index` is the position of
the row among the rows of frame `f` in the tracks file.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from .errors import DataError
from .tracklet import DetKey

PathLike = Union[str, Path]
MOT_TAIL = ("-1", "-1", "-1")


@dataclass(frozen=True)
class MotRow:
    frame: int
    track_id: int
    tokens: Tuple[str, ...]  # x, y, w, h, conf and any trailing columns, as written
    index: int = 0  # position among the rows of this frame in the source file

    @property
    def box(self) -> np.ndarray:
        return np.array([float(t) for t in self.tokens[:4]])

    @property
    def key(self) -> DetKey:
        return (self.frame, self.index)

    def with_id(self, track_id: int) -> "MotRow":
        return replace(self, track_id=track_id)

    def to_line(self) -> str:
        return ",".join([str(self.frame), str(self.track_id), *self.tokens])


def make_row(frame: int, track_id: int, box: Sequence[float], conf: float = 1.0, index: int = 0) -> MotRow:
    x, y, w, h = (float(v) for v in box)
    tokens = (f"{x:.2f}", f"{y:.2f}", f"{w:.2f}", f"{h:.2f}", f"{conf:g}", *MOT_TAIL)
    return MotRow(frame=frame, track_id=track_id, tokens=tokens, index=index)


def _parse_line(line: str, lineno: int, path: str) -> Tuple[int, int, Tuple[str, ...]]:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) < 6:
        raise DataError(f"expected at least 6 columns, got {len(parts)}", line=lineno, path=path)
    try:
        frame = int(float(parts[0]))
        track_id = int(float(parts[1]))
        x, y, w, h = (float(p) for p in parts[2:6])
        if len(parts) > 6:
            float(parts[6])
    except ValueError as e:
        raise DataError(f"non-numeric field ({e})", line=lineno, path=path) from None
    if not all(np.isfinite([x, y, w, h])):
        raise DataError("non-finite box", line=lineno, path=path)
    if w < 0 or h < 0:
        raise DataError(f"negative box size w={w} h={h}", line=lineno, path=path)
    if frame < 0:
        raise DataError(f"negative frame {frame}", line=lineno, path=path)
    tokens = tuple(parts[2:]) if len(parts) > 6 else tuple(parts[2:]) + ("1",) + MOT_TAIL
    return frame, track_id, tokens


def read_mot_rows(path: PathLike) -> List[MotRow]:
    """Rows in file order; duplicate (frame, id) pairs are rejected."""
    path = str(path)
    rows: List[MotRow] = []
    seen: Dict[Tuple[int, int], int] = {}
    per_frame: Dict[int, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            frame, track_id, tokens = _parse_line(line.rstrip("\n"), lineno, path)
            if (frame, track_id) in seen:
                raise DataError(
                    f"duplicate row for frame {frame}, id {track_id} (first on line {seen[(frame, track_id)]})",
                    line=lineno,
                    path=path,
                )
            seen[(frame, track_id)] = lineno
            index = per_frame.get(frame, 0)
            per_frame[frame] = index + 1
            rows.append(MotRow(frame=frame, track_id=track_id, tokens=tokens, index=index))
    return rows


def group_tracks(rows: Iterable[MotRow]) -> Dict[int, List[MotRow]]:
    tracks: Dict[int, List[MotRow]] = {}
    for r in rows:
        tracks.setdefault(r.track_id, []).append(r)
    for rs in tracks.values():
        rs.sort(key=lambda r: r.frame)
    return dict(sorted(tracks.items()))


def parse_mot(path: PathLike) -> Dict[int, List[MotRow]]:
    """Tracks keyed by id, each sorted by frame."""
    return group_tracks(read_mot_rows(path))


def sort_rows(rows: Iterable[MotRow]) -> List[MotRow]:
    return sorted(rows, key=lambda r: (r.frame, r.track_id))


def format_mot(rows: Iterable[MotRow]) -> str:
    return "".join(r.to_line() + "\n" for r in sort_rows(rows))


def write_mot(path: PathLike, rows: Iterable[MotRow]) -> None:
    """Frame-major, then id."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_mot(rows))


# ----------------------------
# Feature sidecar
# ----------------------------

def write_features(path: PathLike, features: Dict[DetKey, np.ndarray]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for (frame, index) in sorted(features):
            vec = [round(float(v), 6) for v in np.asarray(features[(frame, index)]).reshape(-1)]
            f.write(json.dumps({"frame": frame, "index": index, "feature": vec}) + "\n")


def read_features(path: PathLike) -> Dict[DetKey, np.ndarray]:
    path = str(path)
    out: Dict[DetKey, np.ndarray] = {}
    dim = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key = (int(obj["frame"]), int(obj["index"]))
                vec = np.asarray(obj["feature"], dtype=np.float32)
            except (ValueError, KeyError, TypeError) as e:
                raise DataError(f"bad feature record ({e})", line=lineno, path=path) from None
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape != (dim,):
                raise DataError(f"feature has {vec.size} values, expected {dim}", line=lineno, path=path)
            if key in out:
                raise DataError(f"duplicate feature for frame {key[0]}, index {key[1]}", line=lineno, path=path)
            out[key] = vec
    return out
