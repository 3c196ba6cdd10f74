"""
Direct loop translation of the convolution sums, used as the test oracle.

No padding arrays, no patch matrices: every output value is accumulated tap by
tap, skipping taps that fall outside the input.
"""

import numpy as np

from dwcaps_engine.core.kernels.conv import ConvSpec
from dwcaps_engine.core.utils.errors import ShapeError


def _array(x):
    return None if x is None else np.asarray(getattr(x, "data", x), dtype=np.float64)


def _loop_standard(F, K, stride, pad, out_size):
    h, w, m = F.shape
    k, _, _, n = K.shape
    G = np.zeros((out_size, out_size, n))
    for row in range(out_size):
        for col in range(out_size):
            for out_c in range(n):
                acc = 0.0
                for i in range(k):
                    for j in range(k):
                        r, c = row * stride + i - pad, col * stride + j - pad
                        if 0 <= r < h and 0 <= c < w:
                            for in_c in range(m):
                                acc += K[i, j, in_c, out_c] * F[r, c, in_c]
                G[row, col, out_c] = acc
    return G


def _loop_depthwise(F, K_hat, stride, pad, out_size):
    h, w, m = F.shape
    k = K_hat.shape[0]
    G = np.zeros((out_size, out_size, m))
    for row in range(out_size):
        for col in range(out_size):
            for ch in range(m):
                acc = 0.0
                for i in range(k):
                    for j in range(k):
                        r, c = row * stride + i - pad, col * stride + j - pad
                        if 0 <= r < h and 0 <= c < w:
                            acc += K_hat[i, j, ch] * F[r, c, ch]
                G[row, col, ch] = acc
    return G


def _single(F, weights, spec):
    out_size = spec.output_size(F.shape[0])
    if spec.mode == "standard":
        G = _loop_standard(F, _array(weights.kernel), spec.stride, spec.pad, out_size)
    elif spec.mode == "depthwise":
        G = _loop_depthwise(F, _array(weights.depthwise), spec.stride, spec.pad, out_size)
    elif spec.mode == "pointwise":
        G = _loop_standard(F, _array(weights.pointwise), 1, 0, F.shape[0])
    else:
        G = _loop_depthwise(F, _array(weights.depthwise), spec.stride, spec.pad, out_size)
        if weights.depthwise_bias is not None:
            G = G + _array(weights.depthwise_bias)
        G = _loop_standard(G, _array(weights.pointwise), 1, 0, G.shape[0])
    if weights.bias is not None:
        G = G + _array(weights.bias)
    return G


def naive_conv_oracle(F, weights, spec: ConvSpec):
    """Reference result for ``F`` ([H, W, C] or [B, H, W, C]) under ``spec`` and ``weights``."""
    weights.check(spec)
    F = _array(F)
    if F.ndim not in (3, 4):
        raise ShapeError(f"Feature maps are [H, W, C] or [B, H, W, C], got shape {F.shape}.")
    if F.shape[-1] != spec.in_channels:
        raise ShapeError(f"Input has {F.shape[-1]} channels, spec expects {spec.in_channels}.")
    if F.ndim == 3:
        return _single(F, weights, spec)
    return np.stack([_single(item, weights, spec) for item in F])


def naive_maxpool(F, window=2, stride=2):
    """Brute-force window maximum of one [H, W, C] map."""
    F = _array(F)
    h, w, c = F.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    out = np.empty((ho, wo, c))
    for row in range(ho):
        for col in range(wo):
            for ch in range(c):
                out[row, col, ch] = max(
                    F[row * stride + i, col * stride + j, ch] for i in range(window) for j in range(window)
                )
    return out
