"""Checkpoint I/O: named float32 tensors in a small versioned binary format.

Layout (all integers little-endian):

    magic   4 bytes  b"MMCK"
    version u32      1
    count   u32      number of tensors
    entry*  count times:
        name_len u16, name utf-8 bytes,
        ndim     u8,  dims u32 * ndim,
        payload  raw little-endian float32, C order

Tensor names are written in sorted order, so saving the same parameters
twice yields byte-identical files. Hyperparameters travel in a JSON
sidecar next to the binary (same stem, ``.json`` suffix).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MMCK"
VERSION = 1


class CheckpointError(ValueError):
    """Raised on malformed checkpoint files; message includes byte offset."""


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_suffix(p.suffix + ".json") if p.suffix != ".json" else p


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> Path:
    """Write name->array mapping; arrays are stored as float32."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name in sorted(tensors):
            # NB: not ascontiguousarray — it silently turns 0-d into 1-d
            arr = np.asarray(tensors[name], dtype="<f4")
            raw_name = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw_name)))
            f.write(raw_name)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())
    if meta is not None:
        write_json(sidecar_path(path), meta)
    return path


def load_checkpoint(path) -> dict:
    """Read back a name->float32-array mapping; validates header and size."""
    path = Path(path)
    blob = path.read_bytes()

    def need(n: int, offset: int, what: str) -> int:
        if offset + n > len(blob):
            raise CheckpointError(f"{path}: truncated {what} at byte {offset} (need {n} more bytes)")
        return offset + n

    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r} at byte 0 (expected {MAGIC!r})")
    off = need(8, 4, "header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version} at byte 4")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = off
        off = need(2, off, "name length")
        (name_len,) = struct.unpack_from("<H", blob, start)
        off = need(name_len, off, "name")
        name = blob[off - name_len:off].decode("utf-8")
        off = need(1, off, "rank")
        ndim = blob[off - 1]
        off = need(4 * ndim, off, "shape")
        shape = struct.unpack_from(f"<{ndim}I", blob, off - 4 * ndim)
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if ndim else 4
        off = need(nbytes, off, f"payload of {name!r}")
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r} at byte {start}")
        arr = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=off - nbytes)
        tensors[name] = arr.reshape(shape).copy()
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes at byte {off}")
    return tensors


def write_json(path, payload: dict) -> Path:
    """Stable JSON writer: sorted keys, fixed separators, trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path
