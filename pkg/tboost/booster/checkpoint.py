"""
Checkpoint container.

    b"TBST"                      magic
    u32 little-endian            format version
    u32 little-endian            manifest length in bytes
    manifest (UTF-8 JSON)        {"meta": {...}, "tensors": [{name, shape, dtype, offset, nbytes}]}
    payload                      raw little-endian arrays, offsets relative to payload start
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .errors import DataError
from .tensor import Tensor

MAGIC = b"TBST"
FORMAT_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_CODES = {np.dtype("float32"): "f32", np.dtype("float64"): "f64"}


def save_checkpoint(
    path: Union[str, Path],
    params: Dict[str, Tensor],
    meta: Optional[Dict[str, Any]] = None,
) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, t in params.items():
        code = _CODES.get(t.dtype)
        if code is None:
            raise ValueError(f"cannot store {name}: unsupported dtype {t.dtype}")
        raw = np.ascontiguousarray(t.data, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "dtype": code, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    manifest = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(manifest)))
        f.write(manifest)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Tensor], Dict[str, Any]]:
    path = str(path)
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError:
        raise DataError("checkpoint not found", path=path) from None

    if blob[:4] != MAGIC:
        raise DataError("not a TBST checkpoint (bad magic)", path=path)
    version, mlen = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}", path=path)
    manifest = json.loads(blob[12: 12 + mlen].decode("utf-8"))
    payload = memoryview(blob)[12 + mlen:]

    params: Dict[str, Tensor] = {}
    for e in manifest["tensors"]:
        dt = _DTYPES[e["dtype"]]
        start, end = e["offset"], e["offset"] + e["nbytes"]
        if end > len(payload):
            raise DataError(f"tensor {e['name']} runs past the end of the file", path=path)
        arr = np.frombuffer(payload[start:end], dtype=dt).reshape(e["shape"])
        params[e["name"]] = Tensor(arr.astype(dt.newbyteorder("="), copy=True), requires_grad=True)
    return params, manifest.get("meta", {})
