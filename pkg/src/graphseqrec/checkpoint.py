"""Flat binary checkpoint archive.

Layout (all integers little-endian):

    byte 0        version (currently 1)
    uint32        record count
    per record:   uint16 name length, utf-8 name,
                  uint8 ndim, ndim x uint32 dims,
                  row-major float64 payload

Records are written in sorted name order so identical contents produce
identical bytes.  Model parameters and optimizer moment buffers share the
same archive; moments use an ``opt.`` name prefix.
"""

from __future__ import annotations

import struct
from typing import Dict

import numpy as np

VERSION = 1


class CheckpointError(ValueError):
    pass


def save_archive(path, arrays: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_archive(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob:
        raise CheckpointError(f"empty checkpoint file: {path}")
    if blob[0] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob[0]} (expected {VERSION})")
    offset = 1
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", blob, offset) if ndim else ()
        offset += 4 * ndim
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).astype(np.float64)
        offset += 8 * size
        out[name] = arr.reshape(dims)
    if offset != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint: {path}")
    return out
