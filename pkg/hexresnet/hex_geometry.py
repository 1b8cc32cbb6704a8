"""
Hexagonal neighborhoods on the offset square array and the rectangular
decomposition of a size-1 hexagonal convolution.

Offset convention: cells in odd-indexed columns sit half a cell lower than
cells in even-indexed columns. Row index grows downwards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from .errors import ShapeMismatchError

HEX_TAPS: Tuple[str, ...] = (
    "center",
    "top",
    "bottom",
    "top_left",
    "bottom_left",
    "top_right",
    "bottom_right",
)

# (dr, dc) per tap, keyed by column parity (0 = even, 1 = odd)
_TAP_OFFSETS: Dict[int, Dict[str, Tuple[int, int]]] = {
    0: {
        "center": (0, 0),
        "top": (-1, 0),
        "bottom": (1, 0),
        "top_left": (-1, -1),
        "bottom_left": (0, -1),
        "top_right": (-1, 1),
        "bottom_right": (0, 1),
    },
    1: {
        "center": (0, 0),
        "top": (-1, 0),
        "bottom": (1, 0),
        "top_left": (0, -1),
        "bottom_left": (1, -1),
        "top_right": (0, 1),
        "bottom_right": (1, 1),
    },
}

# K1r1 is stored as a 2x2 kernel applied with column dilation 2, so its
# footprint is 2 rows x 3 columns with an untouched middle column.
K1R1_TAPS: Tuple[Tuple[str, str], Tuple[str, str]] = (
    ("top_left", "top_right"),
    ("bottom_left", "bottom_right"),
)
K1R2_TAPS: Tuple[str, str, str] = ("top", "center", "bottom")


class HexNeighbor(NamedTuple):
    row: int
    col: int
    tap: str


def tap_offset(tap: str, column: int) -> Tuple[int, int]:
    """Row/column offset of a named tap for a cell in ``column``."""
    return _TAP_OFFSETS[column % 2][tap]


def neighborhood(r: int, c: int) -> FrozenSet[HexNeighbor]:
    """
    The 7-cell size-1 hexagonal footprint around ``(r, c)``.

    Out-of-range coordinates are returned as-is; callers clip.
    """
    offsets = _TAP_OFFSETS[c % 2]
    return frozenset(HexNeighbor(r + dr, c + dc, tap) for tap, (dr, dc) in offsets.items())


def in_bounds_neighborhood(r: int, c: int, height: int, width: int) -> FrozenSet[HexNeighbor]:
    return frozenset(n for n in neighborhood(r, c) if 0 <= n.row < height and 0 <= n.col < width)


class PadSpec(NamedTuple):
    top: int
    bottom: int
    left: int
    right: int


@dataclass(frozen=True)
class PlanBranch:
    """One padded rectangular convolution of the decomposition."""

    name: str
    pad: PadSpec
    kernel: str  # "k1r1" or "k1r2"
    stride: Tuple[int, int]
    dilation: Tuple[int, int]
    columns: str  # which output columns the branch produces: "even", "odd" or "all"


@dataclass(frozen=True)
class HexDecompositionPlan:
    branches: Tuple[PlanBranch, PlanBranch, PlanBranch]

    @property
    def kernels(self) -> FrozenSet[str]:
        return frozenset(b.kernel for b in self.branches)

    def branch(self, name: str) -> PlanBranch:
        for b in self.branches:
            if b.name == name:
                return b
        raise KeyError(name)


_PLAN = HexDecompositionPlan(
    branches=(
        PlanBranch("S1", PadSpec(1, 0, 1, 1), "k1r1", (1, 2), (1, 2), "even"),
        PlanBranch("S2", PadSpec(0, 1, 0, 1), "k1r1", (1, 2), (1, 2), "odd"),
        PlanBranch("S3", PadSpec(1, 1, 0, 0), "k1r2", (1, 1), (1, 1), "all"),
    )
)

_KERNEL_SHAPES = {"k1r1": (2, 2), "k1r2": (3, 1)}


def decomposition_plan() -> HexDecompositionPlan:
    """The fixed plan realizing a size-1 hex convolution as three rectangular ones."""
    return _PLAN


def _branch_output_extent(size: int, pad_lo: int, pad_hi: int, k: int, dil: int, stride: int) -> int:
    span = dil * (k - 1) + 1
    padded = size + pad_lo + pad_hi
    if padded < span:
        return 0
    return (padded - span) // stride + 1


def branch_output_shape(branch: PlanBranch, height: int, width: int) -> Tuple[int, int]:
    kh, kw = _KERNEL_SHAPES[branch.kernel]
    p = branch.pad
    return (
        _branch_output_extent(height, p.top, p.bottom, kh, branch.dilation[0], branch.stride[0]),
        _branch_output_extent(width, p.left, p.right, kw, branch.dilation[1], branch.stride[1]),
    )


def plan_output_widths(width: int, plan: Optional[HexDecompositionPlan] = None) -> Tuple[int, int, int]:
    """Widths of P1, P2 and P3 for an input of the given width."""
    plan = plan or _PLAN
    return tuple(branch_output_shape(b, 1, width)[1] for b in plan.branches)  # type: ignore[return-value]


def covered_cells(r: int, c: int, plan: Optional[HexDecompositionPlan] = None) -> List[HexNeighbor]:
    """
    Input cells (in unpadded coordinates) read by the plan for output ``(r, c)``,
    tagged with the weight that multiplies them. Taps landing in padding are
    still listed; callers clip.
    """
    plan = plan or _PLAN
    touched: List[HexNeighbor] = []
    parity = "even" if c % 2 == 0 else "odd"
    for b in plan.branches:
        if b.columns not in (parity, "all"):
            continue
        j = c // 2 if b.columns != "all" else c
        row0 = r * b.stride[0] - b.pad.top
        col0 = j * b.stride[1] - b.pad.left
        if b.kernel == "k1r1":
            for i, names in enumerate(K1R1_TAPS):
                for k, name in enumerate(names):
                    touched.append(HexNeighbor(row0 + i * b.dilation[0], col0 + k * b.dilation[1], name))
        else:
            for i, name in enumerate(K1R2_TAPS):
                touched.append(HexNeighbor(row0 + i * b.dilation[0], col0, name))
    return touched


@dataclass
class HexKernelWeights:
    """
    Seven trainable scalars per (out-channel, in-channel) pair, held as the
    two rectangular sub-kernels of the decomposition:

    - ``k1r1``: (O, I, 2, 2), the live cells of the 2x3 side footprint
    - ``k1r2``: (O, I, 3, 1), the center column
    """

    k1r1: np.ndarray
    k1r2: np.ndarray

    def __post_init__(self) -> None:
        if self.k1r1.ndim != 4 or self.k1r1.shape[2:] != (2, 2):
            raise ShapeMismatchError(f"k1r1 must have shape (O, I, 2, 2), got {self.k1r1.shape}")
        if self.k1r2.ndim != 4 or self.k1r2.shape[2:] != (3, 1):
            raise ShapeMismatchError(f"k1r2 must have shape (O, I, 3, 1), got {self.k1r2.shape}")
        if self.k1r1.shape[:2] != self.k1r2.shape[:2]:
            raise ShapeMismatchError(
                f"sub-kernel channel extents differ: {self.k1r1.shape[:2]} vs {self.k1r2.shape[:2]}"
            )

    @property
    def out_channels(self) -> int:
        return self.k1r1.shape[0]

    @property
    def in_channels(self) -> int:
        return self.k1r1.shape[1]

    @property
    def num_parameters(self) -> int:
        return self.k1r1.size + self.k1r2.size

    @classmethod
    def zeros(cls, out_channels: int, in_channels: int, dtype=np.float32) -> "HexKernelWeights":
        return cls(
            np.zeros((out_channels, in_channels, 2, 2), dtype=dtype),
            np.zeros((out_channels, in_channels, 3, 1), dtype=dtype),
        )

    @classmethod
    def from_named(cls, taps: Mapping[str, np.ndarray]) -> "HexKernelWeights":
        """Build from a mapping of tap name to an (O, I) array; missing taps are zero."""
        shapes = {np.shape(v) for v in taps.values()}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"tap arrays must share one (O, I) shape, got {shapes}")
        shape = shapes.pop()
        if len(shape) != 2:
            raise ShapeMismatchError(f"tap arrays must be (O, I), got {shape}")
        unknown = set(taps) - set(HEX_TAPS)
        if unknown:
            raise KeyError(f"unknown hex taps: {sorted(unknown)}")
        dtype = np.result_type(*taps.values())
        weights = cls.zeros(shape[0], shape[1], dtype=dtype)
        for i, names in enumerate(K1R1_TAPS):
            for k, name in enumerate(names):
                if name in taps:
                    weights.k1r1[:, :, i, k] = taps[name]
        for i, name in enumerate(K1R2_TAPS):
            if name in taps:
                weights.k1r2[:, :, i, 0] = taps[name]
        return weights

    @classmethod
    def center_only(cls, center: np.ndarray) -> "HexKernelWeights":
        """Hex kernel equal to a 1x1 convolution with weights ``center`` (O, I)."""
        return cls.from_named({"center": np.asarray(center)})

    def named(self) -> Dict[str, np.ndarray]:
        taps: Dict[str, np.ndarray] = {}
        for i, names in enumerate(K1R1_TAPS):
            for k, name in enumerate(names):
                taps[name] = self.k1r1[:, :, i, k]
        for i, name in enumerate(K1R2_TAPS):
            taps[name] = self.k1r2[:, :, i, 0]
        return {name: taps[name] for name in HEX_TAPS}

    def footprint(self) -> np.ndarray:
        """The (O, I, 2, 3) side kernel with its structurally-zero middle column."""
        full = np.zeros(self.k1r1.shape[:2] + (2, 3), dtype=self.k1r1.dtype)
        full[:, :, :, 0] = self.k1r1[:, :, :, 0]
        full[:, :, :, 2] = self.k1r1[:, :, :, 1]
        return full

    def astype(self, dtype) -> "HexKernelWeights":
        return HexKernelWeights(self.k1r1.astype(dtype), self.k1r2.astype(dtype))
