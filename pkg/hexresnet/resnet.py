"""
CIFAR-style ResNet and Hex-ResNet assembly.

Every residual block computes ``relu(F(x) + P(x))`` where ``F`` is
conv3x3-BN-ReLU-conv3x3-BN and ``P`` is the shortcut. Only the first block of
stages 2 and 3 changes dimensions; its shortcut follows ``ArchConfig.shortcut_mode``.
All other shortcuts are plain identities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple

import numpy as np

from .config import STAGE_WIDTHS, ArchConfig, ShortcutMode
from .conv import subsample2, subsample2_backward
from .errors import ShapeMismatchError
from .layers import (
    BatchNorm2d,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    HexConv2d,
    Layer,
    Linear,
    ReLU,
    Sequential,
)
from .tensor import Tensor

logger = logging.getLogger(__name__)

Shape = Tuple[int, int, int]  # (C, H, W)

# Published CIFAR-10 parameter counts, keyed by depth.
PUBLISHED_PARAMETERS: Dict[str, Dict[int, int]] = {
    "baseline": {20: 272_474, 32: 466_906, 44: 661_338, 56: 855_770},
    "hex": {20: 287_130, 32: 481_114, 44: 675_098, 56: 869_082},
}


def _half(n: int) -> int:
    return math.ceil(n / 2)


class IdentityShortcut(Layer):
    def forward(self, x: Tensor) -> Tensor:
        return x

    def backward(self, grad: Tensor) -> Tensor:
        return grad

    def output_shape(self, shape: Shape) -> Shape:
        return shape


class PadShortcut(Layer):
    """Option A: subsample by 2 and zero-pad the new channels on both sides."""

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.pad_lo = (out_channels - in_channels) // 2
        self.pad_hi = out_channels - in_channels - self.pad_lo

    def forward(self, x: Tensor) -> Tensor:
        self._stash(x.shape)
        sub = subsample2(x)
        return np.pad(sub, ((0, 0), (self.pad_lo, self.pad_hi), (0, 0), (0, 0)), mode="constant")

    def backward(self, grad: Tensor) -> Tensor:
        input_shape = self._take_cache()
        sub_grad = grad[:, self.pad_lo:self.pad_lo + self.in_channels]
        return subsample2_backward(np.ascontiguousarray(sub_grad), input_shape)

    def output_shape(self, shape: Shape) -> Shape:
        return self.out_channels, _half(shape[1]), _half(shape[2])

    def __repr__(self) -> str:
        return f"PadShortcut({self.in_channels}->{self.out_channels})"


class ProjectionShortcut(Sequential):
    """Option B: 1x1 convolution with stride 2, then batch norm."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__(
            Conv2d(in_channels, out_channels, 1, rng, stride=2, padding=0, dtype=dtype),
            BatchNorm2d(out_channels, dtype=dtype),
        )
        self.out_channels = out_channels

    def output_shape(self, shape: Shape) -> Shape:
        conv: Conv2d = self.layers[0]  # type: ignore[assignment]
        h, w = conv.spec.output_shape(shape[1], shape[2])
        return self.out_channels, h, w


class HexProjectionShortcut(Sequential):
    """Size-1 hex convolution, subsample by 2, then batch norm."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__(
            HexConv2d(in_channels, out_channels, rng, stride=2, dtype=dtype),
            BatchNorm2d(out_channels, dtype=dtype),
        )
        self.out_channels = out_channels

    @property
    def hexconv(self) -> HexConv2d:
        return self.layers[0]  # type: ignore[return-value]

    def output_shape(self, shape: Shape) -> Shape:
        return self.out_channels, _half(shape[1]), _half(shape[2])


def make_shortcut(
    mode: ShortcutMode, in_channels: int, out_channels: int, rng: np.random.Generator, dtype=np.float32
) -> Layer:
    if mode is ShortcutMode.IDENTITY_PAD:
        return PadShortcut(in_channels, out_channels)
    if mode is ShortcutMode.PROJECTION_1X1:
        return ProjectionShortcut(in_channels, out_channels, rng, dtype)
    if mode is ShortcutMode.HEX_PROJECTION:
        return HexProjectionShortcut(in_channels, out_channels, rng, dtype)
    raise ValueError(f"unknown shortcut mode {mode!r}")


class ResidualBlock(Layer):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        stride: int,
        shortcut_mode: ShortcutMode,
        rng: np.random.Generator,
        dtype=np.float32,
    ) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.main = self.add_child(
            "main",
            Sequential(
                Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1, dtype=dtype),
                BatchNorm2d(out_channels, dtype=dtype),
                ReLU(),
                Conv2d(out_channels, out_channels, 3, rng, stride=1, padding=1, dtype=dtype),
                BatchNorm2d(out_channels, dtype=dtype),
            ),
        )
        if stride != 1 or in_channels != out_channels:
            shortcut = make_shortcut(shortcut_mode, in_channels, out_channels, rng, dtype)
        else:
            shortcut = IdentityShortcut()
        self.shortcut = self.add_child("shortcut", shortcut)
        self.out_relu = self.add_child("relu", ReLU())

    def main_output_shape(self, shape: Shape) -> Shape:
        first: Conv2d = self.main.layers[0]  # type: ignore[assignment]
        h, w = first.spec.output_shape(shape[1], shape[2])
        return self.out_channels, h, w

    def output_shape(self, shape: Shape) -> Shape:
        main_shape = self.main_output_shape(shape)
        skip_shape = self.shortcut.output_shape(shape)  # type: ignore[attr-defined]
        if main_shape != skip_shape:
            raise ShapeMismatchError(
                f"shortcut output {skip_shape} does not match main path {main_shape} for {self!r}"
            )
        return main_shape

    def forward(self, x: Tensor) -> Tensor:
        residual = self.main.forward(x)
        skip = self.shortcut.forward(x)
        if residual.shape != skip.shape:
            raise ShapeMismatchError(f"shortcut output {skip.shape} does not match main path {residual.shape}")
        return self.out_relu.forward(residual + skip)

    def backward(self, grad: Tensor) -> Tensor:
        grad = self.out_relu.backward(grad)
        return self.main.backward(grad) + self.shortcut.backward(grad)

    def __repr__(self) -> str:
        return (
            f"ResidualBlock({self.in_channels}->{self.out_channels}, stride={self.stride}, "
            f"shortcut={self.shortcut!r})"
        )


class ResNet(Layer):
    """Stem, three stages of residual blocks, global average pool and a linear head."""

    def __init__(self, cfg: ArchConfig, rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        w1 = STAGE_WIDTHS[0]
        self.stem = self.add_child(
            "stem",
            Sequential(
                Conv2d(3, w1, 3, rng, stride=1, padding=1, dtype=dtype),
                BatchNorm2d(w1, dtype=dtype),
                ReLU(),
            ),
        )
        self.blocks: List[ResidualBlock] = []
        in_channels = w1
        for stage, width in enumerate(STAGE_WIDTHS):
            for index in range(cfg.blocks_per_stage):
                stride = 2 if stage > 0 and index == 0 else 1
                block = ResidualBlock(in_channels, width, stride, cfg.shortcut_mode, rng, dtype)
                self.add_child(f"stage{stage + 1}.{index}", block)
                self.blocks.append(block)
                in_channels = width
        self.head = self.add_child(
            "head",
            Sequential(GlobalAvgPool(), Flatten(), Linear(in_channels, cfg.num_classes, rng, dtype=dtype)),
        )
        self.check_shapes()

    @property
    def input_shape(self) -> Shape:
        return 3, self.cfg.image_size, self.cfg.image_size

    def check_shapes(self) -> List[Shape]:
        """Propagate shapes through every block; raises if a shortcut disagrees with its main path."""
        shape: Shape = (STAGE_WIDTHS[0], self.cfg.image_size, self.cfg.image_size)
        shapes = [shape]
        for block in self.blocks:
            shape = block.output_shape(shape)
            shapes.append(shape)
        return shapes

    @property
    def classifier(self) -> Linear:
        return self.head.layers[-1]  # type: ignore[return-value]

    def hex_layers(self) -> List[HexConv2d]:
        return [m for m in self.modules() if isinstance(m, HexConv2d)]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeMismatchError(f"expected input (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        out = self.stem.forward(x.astype(self.dtype, copy=False))
        for block in self.blocks:
            out = block.forward(out)
        return self.head.forward(out)

    def backward(self, grad: Tensor) -> Tensor:
        grad = self.head.backward(grad)
        for block in reversed(self.blocks):
            grad = block.backward(grad)
        return self.stem.backward(grad)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {f"param:{name}": p.data.copy() for name, p in self.named_parameters()}
        state.update({f"buffer:{name}": b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        targets: Dict[str, np.ndarray] = {f"param:{n}": p.data for n, p in self.named_parameters()}
        targets.update({f"buffer:{n}": b for n, b in self.named_buffers()})
        missing = sorted(set(targets) - set(state))
        if missing:
            raise KeyError(f"state is missing entries: {missing[:5]}")
        unexpected = sorted(set(state) - set(targets))
        if unexpected:
            raise KeyError(f"state has unexpected entries: {unexpected[:5]}")
        for key, target in targets.items():
            value = np.asarray(state[key])
            if value.size != target.size:
                raise ShapeMismatchError(f"{key}: expected {target.size} values, got {value.size}")
            target[...] = value.reshape(target.shape)

    def layer_summary(self) -> List[str]:
        lines = [f"stem: {self.stem!r}"]
        for name, child in self._children.items():
            if isinstance(child, ResidualBlock):
                lines.append(f"{name}: {child!r}")
        lines.append(f"head: {self.head!r}")
        return lines


def build_network(cfg: ArchConfig, rng: np.random.Generator, dtype=np.float32) -> ResNet:
    model = ResNet(cfg, rng, dtype)
    logger.debug(
        "built depth-%d %s network with %d parameters",
        cfg.depth,
        cfg.shortcut_mode.value,
        count_parameters(model),
    )
    return model


def count_parameters(model: Layer) -> int:
    """Trainable scalars: conv/hex/linear weights, linear bias, batch-norm gamma and beta."""
    return sum(p.size for _, p in model.named_parameters())


def expected_parameter_count(cfg: ArchConfig) -> int:
    """Closed-form count matching :func:`count_parameters` for a built model."""
    n = cfg.blocks_per_stage
    w1, w3 = STAGE_WIDTHS[0], STAGE_WIDTHS[-1]
    total = 3 * w1 * 9 + 2 * w1  # stem conv + BN
    in_channels = w1
    for stage, width in enumerate(STAGE_WIDTHS):
        for index in range(n):
            total += in_channels * width * 9 + width * width * 9 + 4 * width
            if stage > 0 and index == 0:
                total += transition_shortcut_parameters(cfg.shortcut_mode, in_channels, width)
            in_channels = width
    total += w3 * cfg.num_classes + cfg.num_classes
    return total


def transition_shortcut_parameters(mode: ShortcutMode, in_channels: int, out_channels: int) -> int:
    if mode is ShortcutMode.IDENTITY_PAD:
        return 0
    if mode is ShortcutMode.PROJECTION_1X1:
        return in_channels * out_channels + 2 * out_channels
    return 7 * in_channels * out_channels + 2 * out_channels


def hex_delta_over_identity() -> int:
    """Extra scalars of hex_projection over identity_pad: 7*(16*32 + 32*64) + 2*(32 + 64)."""
    w1, w2, w3 = STAGE_WIDTHS
    return 7 * (w1 * w2 + w2 * w3) + 2 * (w2 + w3)


@dataclass(frozen=True)
class ParameterReport:
    depth: int
    counts: Dict[str, int]
    table_baseline: int
    table_hex: int

    @property
    def table_delta(self) -> int:
        return self.table_hex - self.table_baseline

    @property
    def hex_minus_identity(self) -> int:
        return self.counts[ShortcutMode.HEX_PROJECTION.value] - self.counts[ShortcutMode.IDENTITY_PAD.value]

    @property
    def hex_minus_projection(self) -> int:
        return self.counts[ShortcutMode.HEX_PROJECTION.value] - self.counts[ShortcutMode.PROJECTION_1X1.value]

    def lines(self) -> List[str]:
        out = [f"depth {self.depth}:"]
        for mode, count in self.counts.items():
            out.append(f"  {mode:<15} {count:>9,}")
        out.append(f"  table baseline  {self.table_baseline:>9,}  (reproduced by projection_1x1)")
        out.append(f"  table hex       {self.table_hex:>9,}")
        out.append(f"  delta hex - identity_pad   {self.hex_minus_identity:>7,}")
        out.append(f"  delta hex - projection_1x1 {self.hex_minus_projection:>7,}")
        out.append(f"  delta in table             {self.table_delta:>7,}")
        return out


def parameter_report(depth: int) -> ParameterReport:
    counts = {
        mode.value: expected_parameter_count(ArchConfig(depth=depth, shortcut_mode=mode))
        for mode in ShortcutMode
    }
    return ParameterReport(
        depth=depth,
        counts=counts,
        table_baseline=PUBLISHED_PARAMETERS["baseline"].get(depth, 0),
        table_hex=PUBLISHED_PARAMETERS["hex"].get(depth, 0),
    )
