"""Flat named-array checkpoint files.

Layout (all integers little-endian):

    magic   4 bytes  b"BSC1"
    count   uint32
    then per array:
        name_len  uint16, name utf-8 bytes
        ndim      uint32
        extents   ndim x uint64
        data      float64 little-endian, row-major

Round-trips are byte-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ParseError

MAGIC = b"BSC1"


def save_arrays(path, arrays):
    """Write a mapping of name -> ndarray (converted to float64)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.astype("<f8").tobytes())


def load_arrays(path):
    """Read a checkpoint back into a dict of name -> ndarray."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ParseError(f"{path}: bad magic bytes")
    off = 4
    try:
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}Q", blob, off) if ndim else ()
            off += 8 * ndim
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(blob, dtype="<f8", count=n, offset=off).copy()
            off += 8 * n
            out[name] = data.reshape(shape)
    except (struct.error, ValueError) as exc:
        raise ParseError(f"{path}: truncated or corrupt checkpoint") from exc
    if off != len(blob):
        raise ParseError(f"{path}: trailing bytes after last array")
    return out
