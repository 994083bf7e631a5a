"""Binary checkpoint container: named float64 matrices plus the run seed.

Layout (all integers little-endian):

    magic   4 bytes  b"FRCK"
    version u32      currently 1
    seed    u64
    count   u32      number of matrices
    per matrix:
        name_len u32, name utf-8,
        rows u64, cols u64,
        rows*cols float64 row-major

Round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FRCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], seed: int) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQI", VERSION, seed & 0xFFFFFFFFFFFFFFFF, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            if arr.ndim != 2:
                raise CheckpointError(f"checkpoint matrices must be 2-D, {name!r} is {arr.ndim}-D")
            enc = name.encode("utf-8")
            fh.write(struct.pack("<I", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], int]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    off = 4
    version, seed, count = struct.unpack_from("<IQI", raw, off)
    off += struct.calcsize("<IQI")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        rows, cols = struct.unpack_from("<QQ", raw, off)
        off += 16
        nbytes = rows * cols * 8
        if off + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arrays[name] = np.frombuffer(raw[off : off + nbytes], dtype="<f8").reshape(rows, cols).copy()
        off += nbytes
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return arrays, seed
