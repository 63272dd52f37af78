"""Binary tensor archive.

Layout (little-endian)::

    b"PTRC" | u32 version=1 | u32 count
    per tensor: u32 name_len | utf-8 name | u32 rank | u64 dims[rank] | f32 payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PTRC"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def save_tensors(tensors: dict[str, np.ndarray], path) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise CheckpointFormatError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        name = f"#{i}"
        try:
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + n].decode("utf-8")
            if len(blob[pos : pos + n]) != n:
                raise ValueError("name cut short")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            nbytes = 4 * int(np.prod(dims, dtype=np.int64))
            if pos + nbytes > len(blob):
                raise ValueError("payload cut short")
            out[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).copy()
            pos += nbytes
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            raise CheckpointFormatError(f"{path}: corrupt tensor {name!r}: {exc}") from exc
    if pos != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - pos} trailing bytes after last tensor")
    return out
