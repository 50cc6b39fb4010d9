"""Flat binary parameter container ("DACK1").

Layout, all integers little-endian::

    b"DACK1"  u32 entry_count
    per entry: u32 name_len, name (utf-8), u32 rank, u64 * rank dims,
               float64 * prod(dims) (little-endian, row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"DACK1"


class CheckpointError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:5] != MAGIC:
        raise CheckpointError("not a DACK1 checkpoint (bad magic)")
    view = memoryview(blob)
    pos = 5

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        name = bytes(view[pos:pos + n]).decode("utf-8")
        pos += n
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(view):
            raise CheckpointError(f"truncated data for entry '{name}'")
        arr = np.frombuffer(view[pos:pos + nbytes], dtype="<f8").reshape(shape)
        out[name] = arr.astype(np.float64)
        pos += nbytes
    if pos != len(view):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save_checkpoint(path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(arrays))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
