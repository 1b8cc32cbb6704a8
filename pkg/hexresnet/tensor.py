"""
Dense rank-4 tensor primitives.

Tensors are plain ``numpy.ndarray`` values laid out as (N, C, H, W) in
row-major order. Every function here is pure: it never mutates its inputs.
"""

from __future__ import annotations

import math
from typing import Sequence, Tuple

import numpy as np

from .errors import ShapeMismatchError

Tensor = np.ndarray

DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
}


def resolve_dtype(precision: str) -> np.dtype:
    """Map a precision name ("float32" / "float64") to a numpy dtype."""
    try:
        return np.dtype(DTYPES[precision])
    except KeyError:
        raise ValueError(f"unsupported precision {precision!r}; expected one of {sorted(DTYPES)}") from None


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: same seed, same stream on the same build."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator whose stream is a pure function of ``(seed, *keys)``."""
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _require_rank4(t: Tensor, name: str = "tensor") -> None:
    if t.ndim != 4:
        raise ShapeMismatchError(f"{name} must have rank 4 (N, C, H, W), got shape {t.shape}")


def pad2d(t: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the two spatial axes of a rank-4 tensor."""
    _require_rank4(t)
    if min(top, bottom, left, right) < 0:
        raise ValueError(f"pad counts must be non-negative, got {(top, bottom, left, right)}")
    return np.pad(t, ((0, 0), (0, 0), (top, bottom), (left, right)), mode="constant")


def crop2d(t: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Remove margins from the spatial axes; inverse of :func:`pad2d`."""
    _require_rank4(t)
    h, w = t.shape[2], t.shape[3]
    if top + bottom > h or left + right > w:
        raise ShapeMismatchError(f"cannot crop {(top, bottom, left, right)} from spatial shape {(h, w)}")
    return t[:, :, top:h - bottom, left:w - right]


def merge_columns(p1: Tensor, p2: Tensor) -> Tensor:
    """
    Interleave the columns of two tensors.

    Output column ``2j`` is ``p1[..., j]`` and output column ``2j + 1`` is
    ``p2[..., j]``. ``p1`` may be one column wider than ``p2``.
    """
    _require_rank4(p1, "p1")
    _require_rank4(p2, "p2")
    if p1.shape[:3] != p2.shape[:3]:
        raise ShapeMismatchError(f"merge_columns: leading extents differ, {p1.shape} vs {p2.shape}")
    w1, w2 = p1.shape[3], p2.shape[3]
    if w1 not in (w2, w2 + 1):
        raise ShapeMismatchError(f"merge_columns: widths {w1} and {w2} cannot interleave")
    out = np.empty(p1.shape[:3] + (w1 + w2,), dtype=np.result_type(p1, p2))
    out[..., 0::2] = p1
    out[..., 1::2] = p2
    return out


def split_columns(x: Tensor) -> Tuple[Tensor, Tensor]:
    """Even and odd columns of ``x``; ``merge_columns(*split_columns(x)) == x``."""
    _require_rank4(x)
    return x[..., 0::2], x[..., 1::2]


def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"elementwise_add: shapes differ, {a.shape} vs {b.shape}")
    return a + b


def kaiming_init(
    rng: np.random.Generator,
    shape: Sequence[int],
    fan_in: int,
    dtype: np.dtype = np.float32,
) -> Tensor:
    """He-normal initialization: i.i.d. N(0, 2 / fan_in)."""
    if fan_in <= 0:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(tuple(shape)) * std).astype(dtype)
