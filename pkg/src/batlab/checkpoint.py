"""Binary checkpoint container for named float32 tensors.

Layout (all integers little-endian)::

    8 bytes   magic  b"BATCKPT1"
    uint32    manifest length M
    M bytes   manifest, UTF-8 JSON (model configuration and metadata)
    uint32    tensor count N
    N times:
        uint16    name length K
        K bytes   name, UTF-8
        uint8     rank R
        R uint32  extents
        prod(extents) float32 values, row-major, little-endian

Values are written as float32 regardless of the in-memory precision.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError

MAGIC = b"BATCKPT1"
_LE_F32 = np.dtype("<f4")


def save_checkpoint(path, tensors: Mapping[str, object], manifest: Mapping | None = None) -> Path:
    path = Path(path)
    meta = json.dumps(dict(manifest or {}), sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", len(meta)), meta, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value))
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_LE_F32).tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, manifest)``; tensors come back as float32 arrays."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise DataError(f"{path}: not a batlab checkpoint")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise DataError(f"{path}: truncated checkpoint")
        out = struct.unpack_from(fmt, buf, pos)
        pos += size
        return out

    (mlen,) = take("<I")
    manifest = json.loads(buf[pos : pos + mlen].decode("utf-8"))
    pos += mlen
    (count,) = take("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<B")
        shape = take(f"<{rank}I") if rank else ()
        n = int(np.prod(shape)) if shape else 1
        end = pos + 4 * n
        if end > len(buf):
            raise DataError(f"{path}: truncated data for tensor {name!r}")
        tensors[name] = np.frombuffer(buf[pos:end], dtype=_LE_F32).astype(np.float32).reshape(shape)
        pos = end
    if pos != len(buf):
        raise DataError(f"{path}: {len(buf) - pos} trailing bytes")
    return tensors, manifest
