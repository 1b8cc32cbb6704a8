"""Binary tensor layout used inside checkpoints.

Each tensor is four little-endian uint64 extents followed by its elements
as little-endian IEEE-754 float32 in row-major order.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Tuple

import numpy as np

from .errors import CheckpointFormatError

_EXTENTS = struct.Struct("<4Q")
_SCALAR = np.dtype("<f4")


def as_extents(shape: Tuple[int, ...]) -> Tuple[int, int, int, int]:
    """Left-pad a shape of rank <= 4 with unit extents."""
    if len(shape) > 4:
        raise ValueError(f"rank {len(shape)} tensors are not serializable")
    return (1,) * (4 - len(shape)) + tuple(int(s) for s in shape)


def write_tensor(fp: BinaryIO, array: np.ndarray) -> int:
    """Write one tensor; returns the number of bytes written."""
    extents = as_extents(array.shape)
    payload = np.ascontiguousarray(array, dtype=_SCALAR).tobytes()
    fp.write(_EXTENTS.pack(*extents))
    fp.write(payload)
    return _EXTENTS.size + len(payload)


def read_tensor(fp: BinaryIO) -> np.ndarray:
    """Read one tensor written by :func:`write_tensor` as a rank-4 float32 array."""
    head = fp.read(_EXTENTS.size)
    if len(head) != _EXTENTS.size:
        raise CheckpointFormatError("truncated tensor header")
    extents = _EXTENTS.unpack(head)
    count = int(np.prod(extents, dtype=np.uint64))
    raw = fp.read(count * _SCALAR.itemsize)
    if len(raw) != count * _SCALAR.itemsize:
        raise CheckpointFormatError(f"truncated tensor payload for extents {extents}")
    return np.frombuffer(raw, dtype=_SCALAR).astype(np.float32).reshape(extents)
