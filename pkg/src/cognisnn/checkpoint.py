"""Binary parameter checkpoints.

Layout (little-endian): magic ``CGSN``, u32 version, then per array in
sorted-name order: u32 name length, utf-8 name, u32 rank, u32 dims, f64
payload. The file ends after the last array.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, CorruptFile

MAGIC = b"CGSN"
VERSION = 1


def dumps(arrays: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 8:
        raise CorruptFile("checkpoint shorter than its header")
    if blob[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CorruptFile(f"unsupported checkpoint version {version}")
    pos, out = 8, {}
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            if len(name.encode("utf-8")) != nlen:
                raise CorruptFile("truncated parameter name")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            end = pos + 8 * count
            if end > len(blob):
                raise CorruptFile(f"payload of {name!r} is truncated")
            out[name] = np.frombuffer(blob[pos:end], dtype="<f8").reshape(dims).astype(np.float64)
            pos = end
    except struct.error as exc:
        raise CorruptFile(f"truncated checkpoint: {exc}") from exc
    return out


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(arrays))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
