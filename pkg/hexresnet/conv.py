"""
Square and hexagonal 2-D convolution, forward and backward.

"Convolution" is cross-correlation (no kernel flip). The square kernel works
on strided sliding windows (im2col through ``sliding_window_view``) and a
single ``tensordot``; its input gradient is a col2im scatter per kernel tap.

The fast hexagonal path realizes a size-1 hex convolution as three padded
rectangular convolutions whose results are column-merged and added, following
:func:`hexresnet.hex_geometry.decomposition_plan`. The reference path gathers
the seven neighbours of every cell directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatchError
from .hex_geometry import HexKernelWeights, PlanBranch, decomposition_plan, in_bounds_neighborhood
from .tensor import Tensor, crop2d, elementwise_add, merge_columns, pad2d, split_columns

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConvSpec:
    kernel: Tuple[int, int]
    stride: Tuple[int, int] = (1, 1)
    padding: Tuple[int, int, int, int] = (0, 0, 0, 0)  # top, bottom, left, right
    dilation: Tuple[int, int] = (1, 1)
    in_channels: int = 1
    out_channels: int = 1
    bias: bool = False

    @classmethod
    def square(
        cls,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        bias: bool = False,
    ) -> "ConvSpec":
        return cls(
            kernel=(kernel_size, kernel_size),
            stride=(stride, stride),
            padding=(padding, padding, padding, padding),
            in_channels=in_channels,
            out_channels=out_channels,
            bias=bias,
        )

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels) + tuple(self.kernel)  # type: ignore[return-value]

    def output_shape(self, height: int, width: int) -> Tuple[int, int]:
        """Output spatial extents; 0 when the padded input is narrower than the footprint."""
        (kh, kw), (sh, sw), (dh, dw) = self.kernel, self.stride, self.dilation
        pt, pb, pl, pr = self.padding

        def extent(size: int, lo: int, hi: int, k: int, d: int, s: int) -> int:
            span = d * (k - 1) + 1
            if size + lo + hi < span:
                return 0
            return (size + lo + hi - span) // s + 1

        return extent(height, pt, pb, kh, dh, sh), extent(width, pl, pr, kw, dw, sw)


def _check_conv_inputs(x: Tensor, weights: Tensor, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise ShapeMismatchError(f"conv input must be rank 4, got {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeMismatchError(f"conv expects {spec.in_channels} input channels, got {x.shape[1]}")
    if weights.shape != spec.weight_shape:
        raise ShapeMismatchError(f"conv weights must have shape {spec.weight_shape}, got {weights.shape}")


def _windows(xp: Tensor, spec: ConvSpec, out_h: int, out_w: int) -> Tensor:
    """(N, C, out_h, out_w, kh, kw) read-only view of the padded input."""
    (kh, kw), (sh, sw), (dh, dw) = spec.kernel, spec.stride, spec.dilation
    span = (dh * (kh - 1) + 1, dw * (kw - 1) + 1)
    view = sliding_window_view(xp, span, axis=(2, 3))
    return view[:, :, ::sh, ::sw, ::dh, ::dw][:, :, :out_h, :out_w]


def conv2d_forward(x: Tensor, weights: Tensor, bias: Optional[Tensor], spec: ConvSpec) -> Tensor:
    _check_conv_inputs(x, weights, spec)
    n = x.shape[0]
    out_h, out_w = spec.output_shape(x.shape[2], x.shape[3])
    dtype = np.result_type(x, weights)
    if out_h == 0 or out_w == 0:
        out = np.zeros((n, spec.out_channels, out_h, out_w), dtype=dtype)
    else:
        xp = pad2d(x, *spec.padding)
        cols = _windows(xp, spec, out_h, out_w)
        out = np.tensordot(cols, weights, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return out


def conv2d_backward(
    grad_out: Tensor, x: Tensor, weights: Tensor, spec: ConvSpec
) -> Tuple[Tensor, Tensor, Tensor]:
    """Exact adjoints of :func:`conv2d_forward`: (grad_input, grad_weights, grad_bias)."""
    _check_conv_inputs(x, weights, spec)
    n, _, h, w = x.shape
    out_h, out_w = spec.output_shape(h, w)
    expected = (n, spec.out_channels, out_h, out_w)
    if grad_out.shape != expected:
        raise ShapeMismatchError(f"grad_out must have shape {expected}, got {grad_out.shape}")

    dtype = np.result_type(grad_out, x, weights)
    grad_bias = grad_out.sum(axis=(0, 2, 3)).astype(dtype)
    if out_h == 0 or out_w == 0:
        return np.zeros(x.shape, dtype=dtype), np.zeros(weights.shape, dtype=dtype), grad_bias

    xp = pad2d(x, *spec.padding)
    cols = _windows(xp, spec, out_h, out_w)
    grad_weights = np.tensordot(grad_out, cols, axes=([0, 2, 3], [0, 2, 3])).astype(dtype)

    # col2im: one GEMM for all taps, then a strided scatter per tap
    (kh, kw), (sh, sw), (dh, dw) = spec.kernel, spec.stride, spec.dilation
    g_nhwo = np.ascontiguousarray(grad_out.transpose(0, 2, 3, 1))
    taps = g_nhwo @ weights.reshape(spec.out_channels, -1)  # (N, Ho, Wo, C*kh*kw)
    taps = taps.reshape(n, out_h, out_w, spec.in_channels, kh, kw)
    grad_xp = np.zeros((n, xp.shape[2], xp.shape[3], spec.in_channels), dtype=dtype)
    row_span = sh * (out_h - 1) + 1
    col_span = sw * (out_w - 1) + 1
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dh, j * dw
            grad_xp[:, r0:r0 + row_span:sh, c0:c0 + col_span:sw, :] += taps[..., i, j]
    grad_input = crop2d(grad_xp.transpose(0, 3, 1, 2), *spec.padding)
    return np.ascontiguousarray(grad_input), grad_weights, grad_bias


def conv2d_reference(x: Tensor, weights: Tensor, bias: Optional[Tensor], spec: ConvSpec) -> Tensor:
    """Direct loop summation; slow, used as an oracle."""
    _check_conv_inputs(x, weights, spec)
    (kh, kw), (sh, sw), (dh, dw) = spec.kernel, spec.stride, spec.dilation
    pt, _, pl, _ = spec.padding
    n, c, h, w = x.shape
    out_h, out_w = spec.output_shape(h, w)
    out = np.zeros((n, spec.out_channels, out_h, out_w), dtype=np.float64)
    for b in range(n):
        for o in range(spec.out_channels):
            for r in range(out_h):
                for col in range(out_w):
                    acc = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            rr = r * sh + i * dh - pt
                            cc = col * sw + j * dw - pl
                            if 0 <= rr < h and 0 <= cc < w:
                                acc += float(np.dot(weights[o, :, i, j], x[b, :, rr, cc]))
                    out[b, o, r, col] = acc
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out.astype(np.result_type(x, weights))


def _check_hex_inputs(x: Tensor, weights: HexKernelWeights) -> None:
    if x.ndim != 4:
        raise ShapeMismatchError(f"hex conv input must be rank 4, got {x.shape}")
    if x.shape[1] != weights.in_channels:
        raise ShapeMismatchError(
            f"hex conv expects {weights.in_channels} input channels, got {x.shape[1]}"
        )


def _add_bias(out: Tensor, bias: Optional[Tensor]) -> Tensor:
    if bias is None:
        return out
    return out + bias.reshape(1, -1, 1, 1)


def hexconv_forward_reference(
    x: Tensor, weights: HexKernelWeights, bias: Optional[Tensor] = None
) -> Tensor:
    """Gather the in-bounds hex neighbourhood of every cell."""
    _check_hex_inputs(x, weights)
    n, _, h, w = x.shape
    taps = weights.named()
    out = np.zeros((n, weights.out_channels, h, w), dtype=np.result_type(x, weights.k1r1))
    for r in range(h):
        for c in range(w):
            for nb in in_bounds_neighborhood(r, c, h, w):
                out[:, :, r, c] += x[:, :, nb.row, nb.col] @ taps[nb.tap].T
    return _add_bias(out, bias)


def _branch_spec(branch: PlanBranch, weights: HexKernelWeights) -> Tuple[ConvSpec, Tensor]:
    kernel = weights.k1r1 if branch.kernel == "k1r1" else weights.k1r2
    spec = ConvSpec(
        kernel=kernel.shape[2:],
        stride=branch.stride,
        dilation=branch.dilation,
        in_channels=weights.in_channels,
        out_channels=weights.out_channels,
    )
    return spec, kernel


def hexconv_forward_fast(
    x: Tensor, weights: HexKernelWeights, bias: Optional[Tensor] = None
) -> Tensor:
    """P1 and P2 cover even and odd output columns, P3 the center column; Q = MERGE(P1, P2) + P3."""
    _check_hex_inputs(x, weights)
    s1, s2, s3 = decomposition_plan().branches
    partial = []
    for branch in (s1, s2, s3):
        spec, kernel = _branch_spec(branch, weights)
        partial.append(conv2d_forward(pad2d(x, *branch.pad), kernel, None, spec))
    p1, p2, p3 = partial
    q = elementwise_add(merge_columns(p1, p2), p3)
    return _add_bias(q, bias)


def hexconv_backward(
    grad_out: Tensor, x: Tensor, weights: HexKernelWeights
) -> Tuple[Tensor, HexKernelWeights, Tensor]:
    """Adjoint of :func:`hexconv_forward_fast`."""
    _check_hex_inputs(x, weights)
    expected = (x.shape[0], weights.out_channels, x.shape[2], x.shape[3])
    if grad_out.shape != expected:
        raise ShapeMismatchError(f"grad_out must have shape {expected}, got {grad_out.shape}")

    g_even, g_odd = split_columns(grad_out)
    grad_input = np.zeros(x.shape, dtype=np.result_type(grad_out, x, weights.k1r1))
    kernel_grads = []
    for branch, g in zip(decomposition_plan().branches, (g_even, g_odd, grad_out)):
        spec, kernel = _branch_spec(branch, weights)
        g_padded, g_kernel, _ = conv2d_backward(g, pad2d(x, *branch.pad), kernel, spec)
        grad_input += crop2d(g_padded, *branch.pad)
        kernel_grads.append(g_kernel)
    grad_weights = HexKernelWeights(kernel_grads[0] + kernel_grads[1], kernel_grads[2])
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return grad_input, grad_weights, grad_bias


def subsample2(t: Tensor) -> Tensor:
    """Keep even rows and columns: (N, C, ceil(H/2), ceil(W/2))."""
    return np.ascontiguousarray(t[:, :, ::2, ::2])


def subsample2_backward(grad_out: Tensor, input_shape: Tuple[int, ...]) -> Tensor:
    grad = np.zeros(input_shape, dtype=grad_out.dtype)
    grad[:, :, ::2, ::2] = grad_out
    return grad


def hexconv_forward_strided(
    x: Tensor, weights: HexKernelWeights, bias: Optional[Tensor] = None, stride: int = 1
) -> Tensor:
    """Same-shape hex convolution, subsampled when ``stride`` is 2."""
    if stride not in (1, 2):
        raise ValueError(f"hex convolution supports stride 1 or 2, got {stride}")
    out = hexconv_forward_fast(x, weights, bias)
    return subsample2(out) if stride == 2 else out
