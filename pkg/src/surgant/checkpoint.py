"""ANTF1 binary tensor checkpoints.

Layout: the 5-byte magic ``ANTF1`` followed by one record per tensor until
end of file. Every integer is an unsigned 64-bit little-endian value::

    name_len | name (UTF-8) | rank | dim_0 .. dim_{rank-1} | data (float64 LE)
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"ANTF1"
_U64 = struct.Struct("<Q")


def dumps(tensors):
    parts = [MAGIC]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(_U64.pack(len(raw)))
        parts.append(raw)
        parts.append(_U64.pack(arr.ndim))
        parts.extend(_U64.pack(d) for d in arr.shape)
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob):
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not an ANTF1 checkpoint (bad magic)")
    pos = len(MAGIC)
    out = {}

    def u64():
        nonlocal pos
        if pos + 8 > len(blob):
            raise CheckpointError("truncated checkpoint")
        (v,) = _U64.unpack_from(blob, pos)
        pos += 8
        return v

    while pos < len(blob):
        n = u64()
        name = blob[pos: pos + n].decode("utf-8")
        pos += n
        rank = u64()
        shape = tuple(u64() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 8 * count
        if end > len(blob):
            raise CheckpointError(f"truncated data for tensor {name!r}")
        out[name] = np.frombuffer(blob[pos:end], dtype="<f8").astype(np.float64).reshape(shape)
        pos = end
    return out


def save(path, tensors):
    with open(path, "wb") as fh:
        fh.write(dumps(tensors))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
