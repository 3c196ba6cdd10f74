"""
Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a read-only, row-major numpy array. Operations on
tensors are :class:`Function` nodes; when at least one input requires a
gradient the output keeps a reference to the node that created it, which is
enough to rebuild the whole :class:`GradGraph` from a scalar loss.

Layout is channels-last: a feature map is ``[H, W, C]`` and a batch of maps is
``[B, H, W, C]``.
"""

import hashlib
import threading
from contextlib import contextmanager

import numpy as np
from gymnasium.utils import seeding

from dwcaps_engine.core.utils.errors import (
    ContractError,
    InvalidRangeError,
    InvalidShapeError,
)

DEFAULT_DTYPE = np.float64

_grad_state = threading.local()


def is_grad_enabled():
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread (evaluation passes)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def check_shape(shape):
    shape = tuple(int(s) for s in shape)
    for s in shape:
        if s < 1:
            raise InvalidShapeError(f"Every extent must be >= 1, got shape {shape}.")
    return shape


def unbroadcast(grad, shape):
    """Sum ``grad`` over the axes numpy broadcasting added to reach ``shape``."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """
    One differentiable operation, i.e. one node of the gradient graph.

    Subclasses implement ``forward`` on numpy arrays and ``backward`` which
    maps the gradient of the output to one gradient (or ``None``) per input.
    Intermediate values needed by ``backward`` are stored on the instance.
    """

    def __init__(self, *inputs):
        self.inputs = inputs

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs):
        inputs = tuple(as_tensor(x) for x in inputs)
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
        return Tensor._wrap(out, requires_grad=requires_grad, creator=fn if requires_grad else None)


class Tensor:
    """
    Immutable dense array with optional gradient tracking.

    Parameters
    ----------
    data: array-like
        Values, copied into a contiguous row-major array.
    requires_grad: bool
        Marks the tensor as a trainable leaf.
    dtype: numpy dtype, optional
        float64 by default; float32 is accepted for training.
    name: str, optional
        Used by checkpoints and error messages.
    """

    # numpy operands defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        array = np.array(data, dtype=dtype, copy=True, order="C")
        self._init(array, requires_grad, None, name)

    @classmethod
    def _wrap(cls, array, requires_grad=False, creator=None, name=None):
        t = cls.__new__(cls)
        t._init(np.ascontiguousarray(array), requires_grad, creator, name)
        return t

    def _init(self, array, requires_grad, creator, name):
        check_shape(array.shape)
        array.flags.writeable = False
        self._data = array
        self.requires_grad = bool(requires_grad)
        self.creator = creator
        self.grad = None
        self.name = name

    # ------------------------------------------------------------------
    @property
    def data(self):
        return self._data

    @property
    def shape(self):
        return self._data.shape

    @property
    def ndim(self):
        return self._data.ndim

    @property
    def size(self):
        return self._data.size

    @property
    def dtype(self):
        return self._data.dtype

    @property
    def is_leaf(self):
        return self.creator is None

    def numpy(self):
        return self._data.copy()

    def item(self):
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}.")
        return float(self._data.reshape(-1)[0])

    def detach(self):
        return Tensor._wrap(self._data, requires_grad=False, name=self.name)

    def zero_grad(self):
        self.grad = None

    def assign(self, values):
        """
        Point a leaf at a fresh array (optimizer steps). The previous array is
        left untouched, so graphs recorded before the step stay consistent.
        """
        if not self.is_leaf:
            raise ContractError("Only leaf tensors can be reassigned.")
        array = np.array(values, dtype=self.dtype, copy=True, order="C")
        if array.shape != self.shape:
            raise InvalidShapeError(f"assign() needs shape {self.shape}, got {array.shape}.")
        array.flags.writeable = False
        self._data = array

    def flatten(self):
        return self.reshape((self.size,))

    def backward(self):
        return backward(self)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad}{tag})"

    # --- arithmetic -----------------------------------------------------
    def __add__(self, other):
        return _ops.Add.apply(self, other)

    def __radd__(self, other):
        return _ops.Add.apply(other, self)

    def __sub__(self, other):
        return _ops.Sub.apply(self, other)

    def __rsub__(self, other):
        return _ops.Sub.apply(other, self)

    def __mul__(self, other):
        return _ops.Mul.apply(self, other)

    def __rmul__(self, other):
        return _ops.Mul.apply(other, self)

    def __truediv__(self, other):
        return _ops.Div.apply(self, other)

    def __rtruediv__(self, other):
        return _ops.Div.apply(other, self)

    def __neg__(self):
        return _ops.Neg.apply(self)

    def __pow__(self, exponent):
        return _ops.Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _ops.Slice.apply(self, key=key)

    # --- reductions and shape ---------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return _ops.Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    def reshape(self, shape):
        return _ops.Reshape.apply(self, shape=tuple(shape))

    def transpose(self, axes=None):
        return _ops.Transpose.apply(self, axes=axes)

    def exp(self):
        return _ops.Exp.apply(self)

    def log(self):
        return _ops.Log.apply(self)

    def relu(self):
        return relu(self)

    def softmax(self, axis=-1):
        return softmax(self, axis)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


# ----------------------------------------------------------------------
# Construction
# ----------------------------------------------------------------------
def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad=False):
    shape = check_shape(shape)
    return Tensor._wrap(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=DEFAULT_DTYPE, requires_grad=False):
    shape = check_shape(shape)
    return Tensor._wrap(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def make_rng(seed):
    """Seeded generator, built the same way gymnasium seeds its environments."""
    if seed is None or int(seed) < 0 or int(seed) >= 2**64:
        raise InvalidRangeError(f"Seed must be an integer in [0, 2**64), got {seed}.")
    rng, _ = seeding.np_random(int(seed))
    return rng


def derive_seed(seed, label):
    """Stable 63-bit seed for one named tensor, independent of construction order."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def random_uniform(shape, seed, lo=0.0, hi=1.0, dtype=DEFAULT_DTYPE, requires_grad=False):
    """Deterministic uniform fill in ``[lo, hi)``; same seed and shape give the same tensor."""
    shape = check_shape(shape)
    if not lo < hi:
        raise InvalidRangeError(f"Need lo < hi, got lo={lo}, hi={hi}.")
    rng = make_rng(seed)
    values = rng.uniform(lo, hi, size=shape).astype(dtype, copy=False)
    return Tensor._wrap(values, requires_grad=requires_grad)


def glorot_uniform(shape, fan_in, fan_out, seed, dtype=DEFAULT_DTYPE, name=None):
    """Trainable leaf drawn from U(-limit, limit), limit = sqrt(6 / (fan_in + fan_out))."""
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    t = random_uniform(shape, seed, -limit, limit, dtype=dtype, requires_grad=True)
    t.name = name
    return t


# ----------------------------------------------------------------------
# Core operations
# ----------------------------------------------------------------------
def matmul(a, b):
    """Matrix product of ``[m, k]`` by ``[k, n]`` (leading batch axes allowed)."""
    return _ops.MatMul.apply(a, b)


def relu(x):
    return _ops.ReLU.apply(x)


def softmax(x, axis=-1):
    """Softmax along ``axis`` with max-subtraction."""
    return _ops.Softmax.apply(x, axis=axis)


# ----------------------------------------------------------------------
# Reverse pass
# ----------------------------------------------------------------------
class GradGraph:
    """
    Recorded forward computation reachable from a loss.

    ``nodes`` is a topological order (inputs before outputs) and ``leaves``
    holds the trainable leaves in first-visit order.
    """

    def __init__(self, nodes, leaves):
        self.nodes = nodes
        self.leaves = leaves

    @classmethod
    def from_loss(cls, loss):
        order, leaves = [], []
        visited = set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                if node.creator is None and node.requires_grad:
                    leaves.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node.creator is not None:
                for parent in reversed(node.creator.inputs):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order, leaves)

    def __len__(self):
        return len(self.nodes)


def backward(loss, graph=None):
    """
    Populate ``grad`` on every trainable leaf of ``graph`` with d(loss)/d(leaf).

    Gradients accumulate into existing ``grad`` values, so callers clear them
    between steps. Returns a dict mapping each leaf to its gradient tensor.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}.")
    if graph is None:
        graph = GradGraph.from_loss(loss)

    pending = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(graph.nodes):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node.creator is None:
            if node.requires_grad:
                node.grad = Tensor._wrap(grad if node.grad is None else node.grad.data + grad)
            continue
        input_grads = node.creator.backward(grad)
        for parent, g in zip(node.creator.inputs, input_grads):
            if g is None or not parent.requires_grad:
                continue
            g = unbroadcast(np.asarray(g, dtype=parent.dtype), parent.shape)
            if id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + g
            else:
                pending[id(parent)] = g

    for leaf in graph.leaves:
        if leaf.grad is None:
            leaf.grad = zeros(leaf.shape, dtype=leaf.dtype)
    return {leaf: leaf.grad for leaf in graph.leaves}


from dwcaps_engine.core.autograd import functions as _ops  # noqa: E402
