"""
Flat binary parameter blobs.

Byte layout (all integers little-endian unsigned)::

    magic     4 bytes   b"CDTN"
    version   u32       1
    count     u32       number of parameter arrays
    count x:
      name_len  u16
      name      name_len bytes, UTF-8
      ndim      u32
      dims      ndim x u32
    data      every array's values as little-endian float64, row-major,
              in header order
"""

from __future__ import annotations

import struct
from typing import Dict

import numpy as np

MAGIC = b"CDTN"
VERSION = 1


def dump_params(params: Dict[str, np.ndarray]) -> bytes:
    names = list(params)
    head = [MAGIC, struct.pack("<II", VERSION, len(names))]
    body = []
    for name in names:
        a = np.asarray(params[name], dtype=np.float64)
        raw = name.encode("utf-8")
        head.append(struct.pack("<H", len(raw)) + raw)
        head.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        body.append(np.ascontiguousarray(a).astype("<f8").tobytes())
    return b"".join(head + body)


def load_params(blob: bytes) -> Dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise ValueError("not a parameter blob (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"unsupported blob version {version}")
    pos = 12
    shapes = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        shapes.append((name, dims))
    out = {}
    for name, dims in shapes:
        n = int(np.prod(dims)) if dims else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(dims)
        pos += 8 * n
    if pos != len(blob):
        raise ValueError(f"blob has {len(blob) - pos} trailing bytes")
    return out
