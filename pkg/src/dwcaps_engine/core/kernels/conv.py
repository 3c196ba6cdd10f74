"""
Standard, depthwise, pointwise and depthwise-separable 2-D convolutions.

Feature maps are channels-last, ``[H, W, C]`` or batched ``[B, H, W, C]``.
Every convolution goes through one patch-flattening node (:class:`Patches`)
followed by a matrix product or a per-channel weighted sum, so gradients come
from the generic graph nodes. ``oracle.py`` holds the loop translation these
paths are checked against.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from dwcaps_engine.core.autograd.tensor import Function, Tensor, as_tensor
from dwcaps_engine.core.utils.errors import ContractError, GeometryError, ShapeError

MODES = ("standard", "depthwise", "pointwise", "separable")
PADDINGS = ("same", "valid")


@dataclass(frozen=True)
class ConvSpec:
    """Kernel geometry: D_K x D_K square kernel, M input and N output channels."""

    kernel_size: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: str = "same"
    mode: str = "standard"

    def __post_init__(self):
        for field_name in ("kernel_size", "in_channels", "out_channels", "stride"):
            if int(getattr(self, field_name)) < 1:
                raise ContractError(f"ConvSpec.{field_name} must be >= 1, got {getattr(self, field_name)}.")
        if self.mode not in MODES:
            raise ContractError(f"Unknown convolution mode {self.mode!r}; expected one of {MODES}.")
        if self.padding not in PADDINGS:
            raise ContractError(f"Unknown padding {self.padding!r}; expected one of {PADDINGS}.")
        # Same padding is kernel-centred; even kernels would need asymmetric padding.
        if self.kernel_size % 2 == 0:
            raise GeometryError(f"Even kernel sizes are not supported, got {self.kernel_size}.")
        if self.mode == "pointwise" and self.kernel_size != 1:
            raise ContractError(f"Pointwise convolution needs a 1x1 kernel, got {self.kernel_size}.")
        if self.mode == "depthwise" and self.out_channels != self.in_channels:
            raise ContractError(
                f"Depthwise convolution keeps the channel count: N={self.out_channels} != M={self.in_channels}."
            )

    @property
    def pad(self):
        return self.kernel_size // 2 if self.padding == "same" else 0

    @property
    def output_channels(self):
        return self.in_channels if self.mode == "depthwise" else self.out_channels

    def output_size(self, input_size):
        return conv_output_size(input_size, self.kernel_size, self.stride, self.pad)


def conv_output_size(input_size, kernel_size, stride=1, pad=0):
    """Spatial extent D_G = floor((D_F + 2*pad - D_K) / stride) + 1."""
    span = input_size + 2 * pad - kernel_size
    if span < 0:
        raise GeometryError(
            f"Kernel {kernel_size}x{kernel_size} does not fit a {input_size}x{input_size} map (pad {pad})."
        )
    return span // stride + 1


@dataclass
class ConvWeights:
    """
    Weights of one convolution.

    Standard mode uses ``kernel`` (D_K x D_K x M x N). Separable mode stores the
    depthwise ``depthwise`` kernel (D_K x D_K x M) and the ``pointwise`` kernel
    (1 x 1 x M x N) separately and never a fused tensor. ``depthwise_bias``
    (length M) follows the depthwise stage, ``bias`` follows the last stage.
    """

    kernel: Optional[Tensor] = None
    depthwise: Optional[Tensor] = None
    pointwise: Optional[Tensor] = None
    bias: Optional[Tensor] = None
    depthwise_bias: Optional[Tensor] = None

    def check(self, spec):
        k, m, n = spec.kernel_size, spec.in_channels, spec.output_channels
        expected = {
            "standard": {"kernel": (k, k, m, n)},
            "depthwise": {"depthwise": (k, k, m)},
            "pointwise": {"pointwise": (1, 1, m, n)},
            "separable": {"depthwise": (k, k, m), "pointwise": (1, 1, m, n)},
        }[spec.mode]
        for name in ("kernel", "depthwise", "pointwise"):
            tensor = getattr(self, name)
            if name in expected:
                if tensor is None or tuple(tensor.shape) != expected[name]:
                    got = None if tensor is None else tuple(tensor.shape)
                    raise ShapeError(f"{spec.mode} weights need {name} of shape {expected[name]}, got {got}.")
            elif tensor is not None:
                raise ShapeError(f"{spec.mode} weights must not carry a {name} tensor.")
        if self.bias is not None and tuple(self.bias.shape) != (n,):
            raise ShapeError(f"Bias must have shape ({n},), got {tuple(self.bias.shape)}.")
        if self.depthwise_bias is not None:
            if spec.mode != "separable":
                raise ShapeError("Only separable weights carry a depthwise bias.")
            if tuple(self.depthwise_bias.shape) != (m,):
                raise ShapeError(f"Depthwise bias must have shape ({m},), got {tuple(self.depthwise_bias.shape)}.")
        return self

    def named(self):
        """Non-empty tensors by name, in a fixed order."""
        order = ("kernel", "depthwise", "depthwise_bias", "pointwise", "bias")
        return {name: getattr(self, name) for name in order if getattr(self, name) is not None}


# ----------------------------------------------------------------------
# Graph nodes
# ----------------------------------------------------------------------
class Patches(Function):
    """
    Sliding D_K x D_K windows of a zero-padded ``[B, H, W, C]`` map.

    Output is ``[B, D_G, D_G, D_K, D_K, C]``; the backward pass scatters the
    window gradients back onto the input (col2im).
    """

    def forward(self, x, kernel_size, stride, pad):
        self.in_shape, self.k, self.stride, self.pad = x.shape, kernel_size, stride, pad
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
        windows = sliding_window_view(xp, (kernel_size, kernel_size), axis=(1, 2))
        windows = windows[:, ::stride, ::stride]
        self.padded_shape = xp.shape
        return np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3))

    def backward(self, grad):
        b, ho, wo = grad.shape[:3]
        s, k, p = self.stride, self.k, self.pad
        xp = np.zeros(self.padded_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                xp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += grad[:, :, :, i, j, :]
        h, w = self.in_shape[1:3]
        return (xp[:, p:p + h, p:p + w, :],)


class MaxPool(Function):
    """Per-channel sliding-window maximum; gradient goes to the first maximal tap."""

    def forward(self, x, window, stride):
        self.in_shape, self.window, self.stride = x.shape, window, stride
        windows = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
        flat = windows.reshape(windows.shape[:4] + (window * window,))
        self.argmax = np.argmax(flat, axis=-1)
        return np.take_along_axis(flat, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        b, ho, wo, c = grad.shape
        di, dj = np.divmod(self.argmax, self.window)
        bi, hi, wi, ci = np.meshgrid(np.arange(b), np.arange(ho), np.arange(wo), np.arange(c), indexing="ij")
        dx = np.zeros(self.in_shape, dtype=grad.dtype)
        np.add.at(dx, (bi, hi * self.stride + di, wi * self.stride + dj, ci), grad)
        return (dx,)


# ----------------------------------------------------------------------
# Public operations
# ----------------------------------------------------------------------
def _batched(feature_map):
    x = as_tensor(feature_map)
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"Feature maps are [H, W, C] or [B, H, W, C], got shape {x.shape}.")


def _unbatched(x, squeeze):
    return x.reshape(x.shape[1:]) if squeeze else x


def _check_channels(x, expected, what):
    if x.shape[-1] != expected:
        raise ShapeError(f"{what}: input has {x.shape[-1]} channels, kernel expects {expected}.")


def _patches(x, spec):
    spatial = x.shape[1]
    spec.output_size(spatial)
    if x.shape[2] != spatial:
        raise ShapeError(f"Feature maps must be square, got {x.shape[1]}x{x.shape[2]}.")
    return Patches.apply(x, kernel_size=spec.kernel_size, stride=spec.stride, pad=spec.pad)


def _add_bias(x, bias):
    return x if bias is None else x + as_tensor(bias)


def conv2d_standard(F, K, spec, bias=None):
    """G[k,l,n] = sum_{i,j,m} K[i,j,m,n] * F[k*s+i-pad, l*s+j-pad, m], zero outside F."""
    x, squeeze = _batched(F)
    K = as_tensor(K)
    k, m, n = spec.kernel_size, spec.in_channels, spec.out_channels
    _check_channels(x, m, "conv2d_standard")
    if tuple(K.shape) != (k, k, m, n):
        raise ShapeError(f"Standard kernel must be {(k, k, m, n)}, got {tuple(K.shape)}.")
    cols = _patches(x, spec)
    b, ho, wo = cols.shape[:3]
    out = cols.reshape((b * ho * wo, k * k * m)) @ K.reshape((k * k * m, n))
    out = _add_bias(out.reshape((b, ho, wo, n)), bias)
    return _unbatched(out, squeeze)


def conv2d_depthwise(F, K_hat, spec, bias=None):
    """G[k,l,m] = sum_{i,j} K_hat[i,j,m] * F[k*s+i-pad, l*s+j-pad, m]; channel m only sees channel m."""
    x, squeeze = _batched(F)
    K_hat = as_tensor(K_hat)
    k, m = spec.kernel_size, spec.in_channels
    _check_channels(x, m, "conv2d_depthwise")
    if tuple(K_hat.shape) != (k, k, m):
        raise ShapeError(f"Depthwise kernel must be {(k, k, m)}, got {tuple(K_hat.shape)}.")
    cols = _patches(x, spec)
    out = (cols * K_hat).sum(axis=(3, 4))
    return _unbatched(_add_bias(out, bias), squeeze)


def conv2d_pointwise(G, W, bias=None):
    """Per-pixel channel mixing out[k,l,n] = sum_m W[0,0,m,n] * G[k,l,m]."""
    x, squeeze = _batched(G)
    W = as_tensor(W)
    if W.ndim != 4 or W.shape[0] != 1 or W.shape[1] != 1:
        raise ContractError(f"Pointwise convolution needs a 1x1xMxN kernel, got {tuple(W.shape)}.")
    m, n = W.shape[2], W.shape[3]
    _check_channels(x, m, "conv2d_pointwise")
    b, h, w = x.shape[:3]
    out = x.reshape((b * h * w, m)) @ W.reshape((m, n))
    out = _add_bias(out.reshape((b, h, w, n)), bias)
    return _unbatched(out, squeeze)


def depthwise_separable(F, K_hat, W, spec, bias=None, depthwise_bias=None):
    """Pointwise convolution of the depthwise convolution; ``bias`` follows the pointwise stage."""
    depthwise_spec = ConvSpec(spec.kernel_size, spec.in_channels, spec.in_channels,
                              stride=spec.stride, padding=spec.padding, mode="depthwise")
    G_hat = conv2d_depthwise(F, K_hat, depthwise_spec, bias=depthwise_bias)
    W = as_tensor(W)
    if tuple(W.shape) != (1, 1, spec.in_channels, spec.out_channels):
        raise ShapeError(
            f"Pointwise kernel must be {(1, 1, spec.in_channels, spec.out_channels)}, got {tuple(W.shape)}."
        )
    return conv2d_pointwise(G_hat, W, bias=bias)


def apply_conv(F, weights, spec):
    """Dispatch on ``spec.mode`` with a :class:`ConvWeights` bundle."""
    weights.check(spec)
    if spec.mode == "standard":
        return conv2d_standard(F, weights.kernel, spec, bias=weights.bias)
    if spec.mode == "depthwise":
        return conv2d_depthwise(F, weights.depthwise, spec, bias=weights.bias)
    if spec.mode == "pointwise":
        if spec.stride != 1:
            raise ContractError("Pointwise convolution runs with stride 1.")
        return conv2d_pointwise(F, weights.pointwise, bias=weights.bias)
    return depthwise_separable(F, weights.depthwise, weights.pointwise, spec,
                               bias=weights.bias, depthwise_bias=weights.depthwise_bias)


def maxpool2d(F, window=2, stride=2):
    """Per-channel sliding-window maximum (2x2 window, stride 2 by default)."""
    x, squeeze = _batched(F)
    if window < 1 or stride < 1:
        raise ContractError(f"Pooling window and stride must be >= 1, got {window}, {stride}.")
    if window > x.shape[1] or window > x.shape[2]:
        raise GeometryError(f"Pooling window {window} exceeds the {x.shape[1]}x{x.shape[2]} input.")
    return _unbatched(MaxPool.apply(x, window=window, stride=stride), squeeze)


def subsample2d(F, stride=2):
    """Keep every ``stride``-th row and column (the capsule-grid stride step)."""
    x, squeeze = _batched(F)
    return _unbatched(x[:, ::stride, ::stride, :], squeeze)
