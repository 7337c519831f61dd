"""Little-endian tensor container shared by parameter checkpoints and feature files.

Layout: 4-byte magic, u32 version, u32 count, then per tensor a u16 name
length, the UTF-8 name, a u8 rank, u32 dims and float32 data.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

VERSION = 1
PARAM_MAGIC = b"AAST"
FEAT_MAGIC = b"FEAT"


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: Mapping[str, np.ndarray], magic: bytes = PARAM_MAGIC) -> None:
    chunks = [magic, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path, magic: bytes = PARAM_MAGIC) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != magic:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(buf):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated file") from exc
    return out
