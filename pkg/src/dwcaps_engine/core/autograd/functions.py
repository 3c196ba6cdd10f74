"""Elementwise, reduction, shape and linear-algebra nodes of the gradient graph."""

import numpy as np

from dwcaps_engine.core.autograd.tensor import Function
from dwcaps_engine.core.utils.errors import AxisError, ShapeError


def normalize_axis(axis, ndim):
    if not -ndim <= axis < ndim:
        raise AxisError(f"Axis {axis} is invalid for a tensor of rank {ndim}.")
    return axis % ndim


def _expand_reduced(grad, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(grad, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = sorted(normalize_axis(a, len(shape)) for a in axes)
    if not keepdims:
        for a in axes:
            grad = np.expand_dims(grad, a)
    return np.broadcast_to(grad, shape)


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        return grad / self.b, -grad * self.a / (self.b * self.b)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Pow(Function):
    def forward(self, a, exponent):
        self.a, self.exponent = a, exponent
        return a ** exponent

    def backward(self, grad):
        return (grad * self.exponent * self.a ** (self.exponent - 1.0),)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class ReLU(Function):
    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0).astype(a.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.mask,)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        if axis is not None:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            for ax in axes:
                normalize_axis(ax, a.ndim)
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        return (_expand_reduced(grad, self.shape, self.axis, self.keepdims),)


class Reshape(Function):
    def forward(self, a, shape):
        self.shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError as err:
            raise ShapeError(f"Cannot reshape {a.shape} into {shape}: {err}")

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        self.axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Slice(Function):
    """Basic (view) indexing: integers, slices with steps, Ellipsis."""

    def forward(self, a, key):
        self.shape, self.dtype, self.key = a.shape, a.dtype, key
        return a[key]

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=self.dtype)
        full[self.key] = grad
        return (full,)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}.")
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        ga = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        gb = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return ga, gb


class Softmax(Function):
    def forward(self, a, axis=-1):
        self.axis = normalize_axis(axis, a.ndim)
        shifted = a - np.max(a, axis=self.axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / np.sum(e, axis=self.axis, keepdims=True)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - np.sum(grad * y, axis=self.axis, keepdims=True)),)


class Length(Function):
    """Euclidean norm along ``axis``; the gradient at the zero vector is taken as zero."""

    def forward(self, a, axis=-1, keepdims=False):
        self.axis = normalize_axis(axis, a.ndim)
        self.keepdims = keepdims
        self.a = a
        self.norm = np.sqrt(np.sum(a * a, axis=self.axis, keepdims=True))
        return self.norm if keepdims else np.squeeze(self.norm, axis=self.axis)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        safe = np.where(self.norm > 0, self.norm, 1.0)
        return (np.where(self.norm > 0, grad * self.a / safe, 0.0),)


class Squash(Function):
    """s = v * |v| / (1 + |v|^2), i.e. norm |v|^2/(1+|v|^2) in the direction of v."""

    def forward(self, a, axis=-1):
        self.axis = normalize_axis(axis, a.ndim)
        self.a = a
        sq = np.sum(a * a, axis=self.axis, keepdims=True)
        self.norm = np.sqrt(sq)
        self.scale = self.norm / (1.0 + sq)
        return a * self.scale

    def backward(self, grad):
        n = self.norm
        dscale = (1.0 - n * n) / (1.0 + n * n) ** 2
        safe = np.where(n > 0, n, 1.0)
        radial = np.sum(self.a * grad, axis=self.axis, keepdims=True)
        second = np.where(n > 0, self.a * radial * dscale / safe, 0.0)
        return (grad * self.scale + second,)
