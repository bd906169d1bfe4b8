"""Checkpoint container.

Layout::

    b"BEAMTAS-CKPT-1\\n"
    uint64 little-endian  length of the JSON index in bytes
    JSON index            {"format": ..., "meta": {...}, "tensors": [{name, dtype, shape, offset, nbytes}]}
    raw tensor data       little-endian, C order, offsets relative to the start of this block
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import ParamSet

MAGIC = b"BEAMTAS-CKPT-1\n"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_TAGS = {np.dtype("float32"): "f32", np.dtype("float64"): "f64"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ParamSet, meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, p in params.items():
        arr = np.asarray(p.value)
        tag = _TAGS.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        entries.append({"name": name, "dtype": tag, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    index = json.dumps({"format": "BEAMTAS-CKPT-1", "meta": meta or {}, "tensors": entries},
                       sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(index)))
        fh.write(index)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[ParamSet, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a BEAMTAS-CKPT-1 file")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    try:
        index = json.loads(data[pos:pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt index ({exc})") from None
    base = pos + n
    params = ParamSet()
    for e in index["tensors"]:
        dt = _DTYPES[e["dtype"]]
        start = base + e["offset"]
        if start + e["nbytes"] > len(data):
            raise CheckpointError(f"{path}: truncated data for {e['name']}")
        arr = np.frombuffer(data, dtype=dt, count=e["nbytes"] // dt.itemsize, offset=start)
        params.add(e["name"], arr.reshape(e["shape"]).astype(dt.newbyteorder("=")))
    return params, index.get("meta", {})
