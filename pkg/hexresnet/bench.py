"""Wall-clock comparison of the hex convolution fast path against a square 3x3 convolution."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .conv import ConvSpec, conv2d_forward, hexconv_forward_fast
from .errors import ConfigError
from .hex_geometry import HexKernelWeights
from .tensor import make_rng

logger = logging.getLogger(__name__)


@dataclass
class BenchReport:
    in_channels: int
    out_channels: int
    spatial: int
    batch: int
    repeats: int
    hex_median: float
    square_median: float
    hex_stdev: Optional[float] = None
    square_stdev: Optional[float] = None

    @property
    def ratio(self) -> float:
        return self.hex_median / self.square_median if self.square_median > 0 else float("inf")

    def lines(self) -> List[str]:
        out = [
            f"shape: N={self.batch} C={self.in_channels}->{self.out_channels} {self.spatial}x{self.spatial}, "
            f"repeats={self.repeats}",
            f"hex conv median:    {self.hex_median * 1e3:.3f} ms",
            f"square 3x3 median:  {self.square_median * 1e3:.3f} ms",
            f"ratio (hex/square): {self.ratio:.3f}",
        ]
        if self.hex_stdev is not None and self.square_stdev is not None:
            out.append(f"stdev: hex {self.hex_stdev * 1e3:.3f} ms, square {self.square_stdev * 1e3:.3f} ms")
        return out


def _timings(fn: Callable[[], np.ndarray], repeats: int) -> np.ndarray:
    fn()  # warm-up
    samples = np.empty(repeats)
    for i in range(repeats):
        start = time.perf_counter()
        fn()
        samples[i] = time.perf_counter() - start
    return samples


def bench(
    in_channels: int = 16,
    out_channels: int = 32,
    spatial: int = 32,
    repeats: int = 100,
    batch: int = 8,
    seed: int = 0,
) -> BenchReport:
    for name, value in (
        ("in_channels", in_channels),
        ("out_channels", out_channels),
        ("spatial", spatial),
        ("repeats", repeats),
        ("batch", batch),
    ):
        if value < 1:
            raise ConfigError(f"{name} must be at least 1, got {value}")

    rng = make_rng(seed)
    x = rng.standard_normal((batch, in_channels, spatial, spatial), dtype=np.float32)
    hex_weights = HexKernelWeights(
        rng.standard_normal((out_channels, in_channels, 2, 2), dtype=np.float32),
        rng.standard_normal((out_channels, in_channels, 3, 1), dtype=np.float32),
    )
    spec = ConvSpec.square(in_channels, out_channels, 3, stride=1, padding=1)
    square_weights = rng.standard_normal(spec.weight_shape, dtype=np.float32)

    hex_times = _timings(lambda: hexconv_forward_fast(x, hex_weights), repeats)
    square_times = _timings(lambda: conv2d_forward(x, square_weights, None, spec), repeats)
    report = BenchReport(
        in_channels=in_channels,
        out_channels=out_channels,
        spatial=spatial,
        batch=batch,
        repeats=repeats,
        hex_median=float(np.median(hex_times)),
        square_median=float(np.median(square_times)),
    )
    if repeats > 1:
        report.hex_stdev = float(np.std(hex_times, ddof=1))
        report.square_stdev = float(np.std(square_times, ddof=1))
    logger.debug("bench ratio %.3f", report.ratio)
    return report
