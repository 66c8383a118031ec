"""``CKPT`` container: named f64 arrays plus string metadata.

Layout (little endian)::

    b"CKPT" | u32 version | u32 count
    count x { u32 name_len | name utf-8 | u32 rank | rank x u32 dim | f64 data }

Metadata entries are stored as ordinary rank-1 parameters named
``meta:<key>`` whose values are the utf-8 bytes of the string.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CKPT"
VERSION = 1
META_PREFIX = "meta:"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | os.PathLike, arrays: dict[str, np.ndarray],
                    meta: dict[str, str] | None = None) -> None:
    entries = dict(arrays)
    for key, value in (meta or {}).items():
        entries[META_PREFIX + key] = np.frombuffer(value.encode("utf-8"), dtype=np.uint8)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, value in entries.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a CKPT file")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported CKPT version {version}")
        pos = 12
        arrays, meta = {}, {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(dims)
            pos += 8 * size
            if name.startswith(META_PREFIX):
                meta[name[len(META_PREFIX):]] = bytes(data.astype(np.uint8)).decode("utf-8")
            else:
                arrays[name] = data.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated CKPT file") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return arrays, meta
