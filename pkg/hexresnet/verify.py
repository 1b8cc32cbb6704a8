"""
Numerical self-checks.

- an oracle sweep comparing the decomposed hex convolution with the direct
  neighbourhood gather
- central-difference gradient checks for every layer and for a small
  one-block-per-stage network, in float64
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import ArchConfig, ShortcutMode
from .conv import hexconv_forward_fast, hexconv_forward_reference
from .hex_geometry import HexKernelWeights
from .layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    HexConv2d,
    Layer,
    Linear,
    ReLU,
    softmax_cross_entropy,
)
from .resnet import build_network
from .tensor import make_rng

logger = logging.getLogger(__name__)

ORACLE_TOLERANCE = 1e-5
LAYER_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4
ORACLE_CHANNELS = (1, 3, 16)
ORACLE_BATCHES = (1, 4)
ORACLE_MAX_EXTENT = 9


@dataclass
class OracleReport:
    cases: int
    max_deviation: float
    worst_case: Optional[Tuple[int, int, int, int, int]]  # N, C_in, C_out, H, W
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_deviation < self.tolerance


def _with_parity(value: int, parity: int) -> int:
    if value % 2 == parity % 2:
        return value
    return value - 1 if value > 1 else value + 1


def verify_hexconv(cases: int = 200, seed: int = 0, tolerance: float = ORACLE_TOLERANCE) -> OracleReport:
    """
    Random float32 cases over H, W in 1..9, channels in {1, 3, 16} and batch
    in {1, 4}; the first four cases cover every (H, W) parity pair.
    """
    if cases < 1:
        raise ValueError("cases must be at least 1")
    rng = make_rng(seed)
    parities = [(1, 1), (1, 2), (2, 1), (2, 2)]
    worst, worst_case = 0.0, None
    for i in range(cases):
        n = int(rng.choice(ORACLE_BATCHES))
        c_in = int(rng.choice(ORACLE_CHANNELS))
        c_out = int(rng.choice(ORACLE_CHANNELS))
        h, w = (int(v) for v in rng.integers(1, ORACLE_MAX_EXTENT + 1, size=2))
        if i < len(parities):
            h, w = _with_parity(h, parities[i][0]), _with_parity(w, parities[i][1])
        x = rng.uniform(-1, 1, size=(n, c_in, h, w)).astype(np.float32)
        weights = HexKernelWeights(
            rng.uniform(-1, 1, size=(c_out, c_in, 2, 2)).astype(np.float32),
            rng.uniform(-1, 1, size=(c_out, c_in, 3, 1)).astype(np.float32),
        )
        bias = rng.uniform(-1, 1, size=c_out).astype(np.float32)
        fast = hexconv_forward_fast(x, weights, bias)
        ref = hexconv_forward_reference(x.astype(np.float64), weights.astype(np.float64), bias.astype(np.float64))
        deviation = float(np.max(np.abs(fast.astype(np.float64) - ref))) if fast.size else 0.0
        logger.debug("case %d N=%d C=%d->%d %dx%d deviation=%.3g", i, n, c_in, c_out, h, w, deviation)
        if deviation >= worst:
            worst, worst_case = deviation, (n, c_in, c_out, h, w)
    report = OracleReport(cases=cases, max_deviation=worst, worst_case=worst_case, tolerance=tolerance)
    if not report.passed:
        logger.error("hex conv oracle deviation %.3g exceeds %.1g at case %s", worst, tolerance, worst_case)
    return report


def numerical_gradient(
    f: Callable[[], float],
    x: np.ndarray,
    eps: float = 1e-6,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Central differences of ``f`` with respect to ``x`` (perturbed in place and
    restored). Only ``indices`` (flat) are evaluated when given.
    """
    flat = x.reshape(-1)
    if not np.shares_memory(flat, x):
        raise ValueError("numerical_gradient needs a contiguous array to perturb in place")
    if indices is None:
        indices = range(flat.size)
    grads = np.empty(len(indices), dtype=np.float64)
    for k, i in enumerate(indices):
        original = flat[i]
        flat[i] = original + eps
        plus = f()
        flat[i] = original - eps
        minus = f()
        flat[i] = original
        grads[k] = (plus - minus) / (2 * eps)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(a) + np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


def _sample(rng: np.random.Generator, size: int, limit: Optional[int]) -> np.ndarray:
    if limit is None or size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, size=limit, replace=False))


def check_layer_gradients(
    layer: Layer,
    x: np.ndarray,
    rng: np.random.Generator,
    eps: float = 1e-6,
    max_coords: Optional[int] = 64,
) -> Dict[str, float]:
    """
    Relative error between backward and central differences of
    ``sum(forward(x) * R)`` for a fixed random ``R``, per input and parameter.
    """
    layer.train()
    upstream = rng.normal(size=layer.forward(x).shape)

    def objective() -> float:
        return float(np.sum(layer.forward(x) * upstream))

    layer.zero_grad()
    layer.forward(x)
    grad_input = layer.backward(upstream)

    errors: Dict[str, float] = {}
    idx = _sample(rng, x.size, max_coords)
    errors["input"] = relative_error(grad_input.reshape(-1)[idx], numerical_gradient(objective, x, eps, idx))
    for name, p in layer.named_parameters():
        idx = _sample(rng, p.data.size, max_coords)
        numeric = numerical_gradient(objective, p.data, eps, idx)
        errors[name] = relative_error(p.grad.reshape(-1)[idx], numeric)
    return errors


def _away_from_zero(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    return x + margin * np.sign(x)


def _layer_cases(rng: np.random.Generator) -> List[Tuple[str, Layer, np.ndarray]]:
    f64 = np.float64
    return [
        ("conv3x3", Conv2d(2, 3, 3, rng, stride=1, padding=1, dtype=f64), rng.normal(size=(2, 2, 5, 6))),
        ("conv3x3_stride2", Conv2d(2, 3, 3, rng, stride=2, padding=1, dtype=f64), rng.normal(size=(2, 2, 5, 6))),
        ("conv1x1_stride2", Conv2d(2, 3, 1, rng, stride=2, dtype=f64), rng.normal(size=(2, 2, 5, 6))),
        ("hexconv_even_width", HexConv2d(2, 3, rng, dtype=f64), rng.normal(size=(2, 2, 5, 6))),
        ("hexconv_odd_width", HexConv2d(2, 3, rng, dtype=f64), rng.normal(size=(2, 2, 4, 5))),
        ("hexconv_width1", HexConv2d(2, 3, rng, dtype=f64), rng.normal(size=(2, 2, 3, 1))),
        ("hexconv_stride2", HexConv2d(2, 3, rng, stride=2, dtype=f64), rng.normal(size=(2, 2, 5, 6))),
        ("batchnorm", BatchNorm2d(3, dtype=f64), rng.normal(size=(4, 3, 3, 3))),
        ("relu", ReLU(), _away_from_zero(rng.normal(size=(2, 3, 4, 4)))),
        ("global_avg_pool", GlobalAvgPool(), rng.normal(size=(2, 3, 4, 4))),
        ("linear", Linear(6, 4, rng, dtype=f64), rng.normal(size=(3, 6))),
    ]


def check_softmax_cross_entropy(rng: np.random.Generator, eps: float = 1e-6) -> float:
    scores = rng.normal(size=(5, 4))
    labels = rng.integers(0, 4, size=5)
    _, analytic = softmax_cross_entropy(scores, labels)
    numeric = numerical_gradient(lambda: softmax_cross_entropy(scores, labels)[0], scores, eps)
    return relative_error(analytic, numeric)


def gradcheck_layers(seed: int = 0, eps: float = 1e-6) -> Dict[str, float]:
    """Worst relative error per layer type."""
    rng = make_rng(seed)
    results: Dict[str, float] = {}
    for name, layer, x in _layer_cases(rng):
        errors = check_layer_gradients(layer, x, rng, eps)
        results[name] = max(errors.values())
        logger.debug("%s: %s", name, {k: f"{v:.2e}" for k, v in errors.items()})
    results["softmax_cross_entropy"] = check_softmax_cross_entropy(rng, eps)
    return results


def gradcheck_model(
    seed: int = 0,
    depth: int = 8,
    shortcut_mode: ShortcutMode = ShortcutMode.HEX_PROJECTION,
    image_size: int = 8,
    batch: int = 4,
    coords_per_param: int = 4,
    eps: float = 1e-6,
) -> float:
    """Relative error of the full-model loss gradient over sampled parameter coordinates and the input."""
    rng = make_rng(seed)
    arch = ArchConfig(depth=depth, shortcut_mode=shortcut_mode, image_size=image_size)
    model = build_network(arch, rng, dtype=np.float64)
    model.train()
    x = rng.normal(size=(batch, 3, image_size, image_size))
    labels = rng.integers(0, arch.num_classes, size=batch)

    def objective() -> float:
        return softmax_cross_entropy(model.forward(x), labels)[0]

    model.zero_grad()
    _, grad_scores = softmax_cross_entropy(model.forward(x), labels)
    grad_input = model.backward(grad_scores)

    analytic: List[np.ndarray] = []
    numeric: List[np.ndarray] = []
    idx = _sample(rng, x.size, coords_per_param * 4)
    analytic.append(grad_input.reshape(-1)[idx])
    numeric.append(numerical_gradient(objective, x, eps, idx))
    for _, p in model.named_parameters():
        idx = _sample(rng, p.data.size, coords_per_param)
        analytic.append(p.grad.reshape(-1)[idx])
        numeric.append(numerical_gradient(objective, p.data, eps, idx))
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


@dataclass
class GradcheckReport:
    layer_errors: Dict[str, float]
    model_error: float
    layer_tolerance: float = LAYER_TOLERANCE
    model_tolerance: float = MODEL_TOLERANCE
    failures: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.failures = [name for name, err in self.layer_errors.items() if not err < self.layer_tolerance]
        if not self.model_error < self.model_tolerance:
            self.failures.append("model")

    @property
    def passed(self) -> bool:
        return not self.failures


def gradcheck(seed: int = 0, depth: int = 8) -> GradcheckReport:
    report = GradcheckReport(
        layer_errors=gradcheck_layers(seed),
        model_error=gradcheck_model(seed, depth=depth),
    )
    for name in report.failures:
        logger.error("gradient check failed for %s", name)
    return report
