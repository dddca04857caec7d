"""Float64 tensor validation and the flat binary serialization format.

Wire format per tensor, little-endian:

    rank:  u32
    dims:  u32 * rank
    data:  f64 * prod(dims), row-major

A tensor map (used by checkpoints and fixtures) is

    count: u32
    entries sorted by name, each:
        name_len: u32, name: utf-8 bytes, then one tensor as above
"""

import struct
from typing import BinaryIO

import numpy as np

from ..errors import NumericsError, ShapeError


def as_tensor(x, shape=None) -> np.ndarray:
    """Coerce to a C-contiguous float64 array, optionally checking shape."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise ShapeError(f"expected shape {tuple(shape)}, got {arr.shape}")
    return arr


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericsError(f"{what} contains non-finite values")
    return x


def write_tensor(f: BinaryIO, arr: np.ndarray) -> None:
    arr = as_tensor(arr)
    f.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<I", d))
    f.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def read_tensor(f: BinaryIO) -> np.ndarray:
    raw = f.read(4)
    if len(raw) != 4:
        raise ShapeError("truncated tensor header")
    (rank,) = struct.unpack("<I", raw)
    dims = struct.unpack("<" + "I" * rank, f.read(4 * rank)) if rank else ()
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = f.read(8 * count)
    if len(payload) != 8 * count:
        raise ShapeError("truncated tensor payload")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return arr.reshape(dims)


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_tensor(f, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)


def save_tensor_map(path, named: dict) -> None:
    """Write a name -> tensor map; entries are sorted so output bytes are
    a pure function of the contents."""
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(named)))
        for name in sorted(named):
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            write_tensor(f, named[name])


def load_tensor_map(path) -> dict:
    out = {}
    with open(path, "rb") as f:
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            out[name] = read_tensor(f)
    return out
