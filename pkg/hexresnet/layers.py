"""
Trainable layers with a uniform forward/backward contract.

Each op exists twice: as a pure functional kernel (``relu``, ``batchnorm_forward``,
...) and as a stateful :class:`Layer` that owns its parameters, buffers and the
activations cached by a train-mode forward pass. ``backward`` consumes that
cache; calling it without one raises :class:`LayerStateError`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .conv import (
    ConvSpec,
    conv2d_backward,
    conv2d_forward,
    hexconv_backward,
    hexconv_forward_fast,
    subsample2,
    subsample2_backward,
)
from .errors import LayerStateError, ShapeMismatchError
from .hex_geometry import HexKernelWeights
from .tensor import Tensor, kaiming_init

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Functional kernels
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def relu_backward(grad: Tensor, x: Tensor) -> Tensor:
    """Gradient gated by ``x > 0``; the subgradient at exactly 0 is 0."""
    return grad * (x > 0)


def global_avg_pool(x: Tensor) -> Tensor:
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(grad: Tensor, input_shape: Tuple[int, ...]) -> Tensor:
    h, w = input_shape[2], input_shape[3]
    return np.broadcast_to(grad / (h * w), input_shape).copy()


def linear_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x`` is (N, D_in), ``weight`` is (D_out, D_in)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatchError(f"linear expects (N, {weight.shape[1]}) input, got {x.shape}")
    return x @ weight.T + bias


def linear_backward(grad: Tensor, x: Tensor, weight: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    return grad @ weight, grad.T @ x, grad.sum(axis=0)


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


@dataclass
class BatchNormCache:
    xhat: Tensor
    inv_std: Tensor


def batchnorm_forward(x: Tensor, state: BatchNormState, training: bool) -> Tuple[Tensor, Optional[BatchNormCache]]:
    """
    Per-channel normalization over (N, H, W).

    Train mode normalizes by batch statistics and updates the running
    statistics in ``state`` in place; eval mode uses the running statistics
    only and leaves ``state`` untouched.
    """
    if x.ndim != 4 or x.shape[1] != state.channels:
        raise ShapeMismatchError(f"batch norm expects {state.channels} channels, got shape {x.shape}")
    shape = (1, -1, 1, 1)
    if training:
        count = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = state.momentum
        unbiased = var * (count / (count - 1)) if count > 1 else var
        state.running_mean[...] = (1 - m) * state.running_mean + m * mean
        state.running_var[...] = (1 - m) * state.running_var + m * unbiased
    else:
        mean, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = xhat * state.gamma.reshape(shape) + state.beta.reshape(shape)
    cache = BatchNormCache(xhat=xhat, inv_std=inv_std) if training else None
    return y.astype(x.dtype, copy=False), cache


def batchnorm_backward(grad: Tensor, cache: BatchNormCache, gamma: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """Gradients of a train-mode batch norm: (grad_input, grad_gamma, grad_beta)."""
    shape = (1, -1, 1, 1)
    count = grad.shape[0] * grad.shape[2] * grad.shape[3]
    grad_beta = grad.sum(axis=(0, 2, 3))
    grad_gamma = (grad * cache.xhat).sum(axis=(0, 2, 3))
    g_xhat = grad * gamma.reshape(shape)
    grad_input = (cache.inv_std.reshape(shape) / count) * (
        count * g_xhat
        - g_xhat.sum(axis=(0, 2, 3)).reshape(shape)
        - cache.xhat * (g_xhat * cache.xhat).sum(axis=(0, 2, 3)).reshape(shape)
    )
    return grad_input.astype(grad.dtype, copy=False), grad_gamma, grad_beta


def softmax_cross_entropy(scores: Tensor, labels: np.ndarray) -> Tuple[float, Tensor]:
    """Mean negative log-likelihood of ``labels`` and its gradient w.r.t. ``scores``."""
    if scores.ndim != 2 or labels.shape != (scores.shape[0],):
        raise ShapeMismatchError(f"scores {scores.shape} and labels {labels.shape} do not match")
    n = scores.shape[0]
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, (grad / n).astype(scores.dtype, copy=False)


# ---------------------------------------------------------------------------
# Stateful layers
# ---------------------------------------------------------------------------

@dataclass
class Parameter:
    data: Tensor
    grad: Tensor = field(default=None)  # type: ignore[assignment]
    is_batchnorm: bool = False

    def __post_init__(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    @property
    def size(self) -> int:
        return int(self.data.size)


class Layer:
    """Base class: parameter/buffer registry, train/eval flag and cache handling."""

    def __init__(self) -> None:
        self.training = True
        self._params: Dict[str, Parameter] = {}
        self._buffers: Dict[str, Tensor] = {}
        self._children: Dict[str, "Layer"] = {}
        self._cache = None

    def add_child(self, name: str, layer: "Layer") -> "Layer":
        self._children[name] = layer
        return layer

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for child_name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{child_name}.")

    def modules(self) -> Iterator["Layer"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Layer":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Layer":
        return self.train(False)

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad[...] = 0

    def _stash(self, cache) -> None:
        self._cache = cache if self.training else None

    def _take_cache(self):
        if self._cache is None:
            raise LayerStateError(f"{type(self).__name__}.backward called without a train-mode forward")
        cache, self._cache = self._cache, None
        return cache

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def backward(self, grad: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


class Conv2d(Layer):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        dtype=np.float32,
    ) -> None:
        super().__init__()
        self.spec = ConvSpec.square(in_channels, out_channels, kernel_size, stride, padding)
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(kaiming_init(rng, self.spec.weight_shape, fan_in, dtype))
        self._params["weight"] = self.weight

    def forward(self, x: Tensor) -> Tensor:
        out = conv2d_forward(x, self.weight.data, None, self.spec)
        self._stash(x)
        return out

    def backward(self, grad: Tensor) -> Tensor:
        x = self._take_cache()
        grad_input, grad_weight, _ = conv2d_backward(grad, x, self.weight.data, self.spec)
        self.weight.grad += grad_weight
        return grad_input

    def __repr__(self) -> str:
        s = self.spec
        return f"Conv2d({s.in_channels}->{s.out_channels}, k={s.kernel[0]}, stride={s.stride[0]})"


class HexConv2d(Layer):
    """Size-1 hexagonal convolution; ``stride=2`` subsamples the same-shape output."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        stride: int = 1,
        dtype=np.float32,
    ) -> None:
        super().__init__()
        if stride not in (1, 2):
            raise ValueError(f"hex convolution supports stride 1 or 2, got {stride}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        fan_in = 7 * in_channels
        self.k1r1 = Parameter(kaiming_init(rng, (out_channels, in_channels, 2, 2), fan_in, dtype))
        self.k1r2 = Parameter(kaiming_init(rng, (out_channels, in_channels, 3, 1), fan_in, dtype))
        self._params["k1r1"] = self.k1r1
        self._params["k1r2"] = self.k1r2

    @property
    def weights(self) -> HexKernelWeights:
        return HexKernelWeights(self.k1r1.data, self.k1r2.data)

    def set_weights(self, weights: HexKernelWeights) -> None:
        self.k1r1.data[...] = weights.k1r1
        self.k1r2.data[...] = weights.k1r2

    def forward(self, x: Tensor) -> Tensor:
        full = hexconv_forward_fast(x, self.weights)
        self._stash((x, full.shape))
        return subsample2(full) if self.stride == 2 else full

    def backward(self, grad: Tensor) -> Tensor:
        x, full_shape = self._take_cache()
        if self.stride == 2:
            grad = subsample2_backward(grad, full_shape)
        grad_input, grad_weights, _ = hexconv_backward(grad, x, self.weights)
        self.k1r1.grad += grad_weights.k1r1
        self.k1r2.grad += grad_weights.k1r2
        return grad_input

    def __repr__(self) -> str:
        return f"HexConv2d({self.in_channels}->{self.out_channels}, stride={self.stride})"


class BatchNorm2d(Layer):
    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5) -> None:
        super().__init__()
        self.state = BatchNormState.create(channels, dtype, momentum, eps)
        self.gamma = Parameter(self.state.gamma, is_batchnorm=True)
        self.beta = Parameter(self.state.beta, is_batchnorm=True)
        self._params.update(gamma=self.gamma, beta=self.beta)
        self._buffers.update(running_mean=self.state.running_mean, running_var=self.state.running_var)

    def forward(self, x: Tensor) -> Tensor:
        y, cache = batchnorm_forward(x, self.state, self.training)
        self._stash(cache)
        return y

    def backward(self, grad: Tensor) -> Tensor:
        cache = self._take_cache()
        grad_input, grad_gamma, grad_beta = batchnorm_backward(grad, cache, self.state.gamma)
        self.gamma.grad += grad_gamma
        self.beta.grad += grad_beta
        return grad_input

    def __repr__(self) -> str:
        return f"BatchNorm2d({self.state.channels})"


class ReLU(Layer):
    def forward(self, x: Tensor) -> Tensor:
        self._stash(x)
        return relu(x)

    def backward(self, grad: Tensor) -> Tensor:
        return relu_backward(grad, self._take_cache())


class GlobalAvgPool(Layer):
    def forward(self, x: Tensor) -> Tensor:
        self._stash(x.shape)
        return global_avg_pool(x)

    def backward(self, grad: Tensor) -> Tensor:
        return global_avg_pool_backward(grad, self._take_cache())


class Flatten(Layer):
    def forward(self, x: Tensor) -> Tensor:
        self._stash(x.shape)
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: Tensor) -> Tensor:
        return grad.reshape(self._take_cache())


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__()
        self.weight = Parameter(kaiming_init(rng, (out_features, in_features), in_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))
        self._params.update(weight=self.weight, bias=self.bias)

    def forward(self, x: Tensor) -> Tensor:
        self._stash(x)
        return linear_forward(x, self.weight.data, self.bias.data)

    def backward(self, grad: Tensor) -> Tensor:
        x = self._take_cache()
        grad_input, grad_weight, grad_bias = linear_backward(grad, x, self.weight.data)
        self.weight.grad += grad_weight
        self.bias.grad += grad_bias
        return grad_input

    def __repr__(self) -> str:
        out_features, in_features = self.weight.data.shape
        return f"Linear({in_features}->{out_features})"


class Sequential(Layer):
    def __init__(self, *layers: Layer) -> None:
        super().__init__()
        self.layers: List[Layer] = list(layers)
        for i, layer in enumerate(self.layers):
            self.add_child(str(i), layer)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: Tensor) -> Tensor:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def __repr__(self) -> str:
        inner: Sequence[str] = [repr(layer) for layer in self.layers]
        return "Sequential(" + ", ".join(inner) + ")"
