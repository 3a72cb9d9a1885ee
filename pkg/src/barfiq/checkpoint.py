"""Flat binary checkpoint format.

Layout (little-endian): magic b"BARQ", u32 version, u32 entry count, then per
entry: u32 name length, UTF-8 name, u32 ndim, u32 dims, float64 payload.
Entries appear in registration order, so files are byte-reproducible for a
given model structure and parameter state.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import DataError

MAGIC = b"BARQ"
VERSION = 1


def save_state(path, state: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(state)))
        for name, array in state.items():
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(array, dtype="<f8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_state(path) -> dict[str, np.ndarray]:
    try:
        blob = open(path, "rb").read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from exc
    if blob[:4] != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    offset = 12
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        n_items = int(np.prod(shape)) if ndim else 1
        array = np.frombuffer(blob, dtype="<f8", count=n_items, offset=offset).reshape(shape)
        offset += 8 * n_items
        state[name] = array.copy()
    if offset != len(blob):
        raise DataError("trailing bytes in checkpoint")
    return state
