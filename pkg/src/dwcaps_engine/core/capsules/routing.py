"""
Capsule operations: squash, primary capsules, votes, routing by agreement,
margin loss and class prediction.

Every operation accepts a single item or a leading batch axis:
poses are ``[num_caps, dim]`` or ``[B, num_caps, dim]``, votes are
``[num_in, num_out, dim]`` or ``[B, num_in, num_out, dim]``.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from dwcaps_engine.core.autograd import functions as ops
from dwcaps_engine.core.autograd.tensor import Tensor, as_tensor, relu, softmax
from dwcaps_engine.core.utils.errors import ContractError, LabelError, ShapeError

M_PLUS = 0.9
M_MINUS = 0.1
DOWN_WEIGHT = 0.5


@dataclass(frozen=True)
class CapsuleConfig:
    primary_capsule_dim: int = 8
    class_capsule_dim: int = 16
    num_classes: int = 29
    routing_iterations: int = 3
    # Differentiate through the routing logits as well (used by gradient checks).
    differentiable_routing: bool = False

    def __post_init__(self):
        for name in ("primary_capsule_dim", "class_capsule_dim", "num_classes", "routing_iterations"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"CapsuleConfig.{name} must be >= 1, got {getattr(self, name)}.")

    def to_dict(self):
        return {
            "primary_capsule_dim": self.primary_capsule_dim,
            "class_capsule_dim": self.class_capsule_dim,
            "num_classes": self.num_classes,
            "routing_iterations": self.routing_iterations,
            "differentiable_routing": self.differentiable_routing,
        }


@dataclass
class RoutingState:
    """Logits ``b`` and couplings ``c = softmax(b)`` over the output axis at one iteration."""

    logits: np.ndarray
    couplings: np.ndarray


@dataclass
class RoutingTrace:
    states: List[RoutingState] = field(default_factory=list)


def squash(v, axis=-1):
    """(|v|^2 / (1 + |v|^2)) * v / |v|; the zero vector maps to itself."""
    return ops.Squash.apply(v, axis=axis)


def capsule_lengths(v):
    return ops.Length.apply(v, axis=-1)


def primary_capsules(feature_map, dim):
    """Cut an ``[H, W, C]`` (or batched) map into H*W*C/dim capsules of length ``dim`` and squash them."""
    x = as_tensor(feature_map)
    if x.ndim not in (3, 4):
        raise ShapeError(f"Feature maps are [H, W, C] or [B, H, W, C], got shape {x.shape}.")
    channels = x.shape[-1]
    if channels % dim != 0:
        raise ShapeError(f"{channels} channels cannot be cut into capsules of dimension {dim}.")
    spatial = x.shape[-3] * x.shape[-2]
    count = spatial * channels // dim
    shape = (count, dim) if x.ndim == 3 else (x.shape[0], count, dim)
    return squash(x.reshape(shape))


def predict_votes(poses, W):
    """u_hat[i, j] = u_i W[i, j] for every input capsule i and output capsule j."""
    u = as_tensor(poses)
    W = as_tensor(W)
    single = u.ndim == 2
    if single:
        u = u.reshape((1,) + u.shape)
    if u.ndim != 3:
        raise ShapeError(f"Poses are [num_in, dim] or [B, num_in, dim], got shape {u.shape}.")
    b, num_in, in_dim = u.shape
    if W.ndim != 4 or W.shape[0] != num_in or W.shape[2] != in_dim:
        raise ShapeError(
            f"Transform matrices must be [{num_in}, num_out, {in_dim}, out_dim], got {tuple(W.shape)}."
        )
    num_out, out_dim = W.shape[1], W.shape[3]
    votes = u.reshape((b, num_in, 1, 1, in_dim)) @ W
    votes = votes.reshape((b, num_in, num_out, out_dim))
    return votes.reshape(votes.shape[1:]) if single else votes


def dynamic_routing(votes, iterations=3, differentiable=False, trace=None):
    """
    Routing by agreement.

    b <- 0; repeat r times: c = softmax(b) over outputs, s_j = sum_i c_ij u_hat_ij,
    v_j = squash(s_j), b_ij += u_hat_ij . v_j. Returns v of the final pass.

    Unless ``differentiable`` is set, the logit updates are computed on
    detached values, so gradients reach the votes through the final pass only.
    When ``trace`` (a :class:`RoutingTrace`) is given, the logits and
    couplings of every iteration are appended to it.
    """
    if int(iterations) < 1:
        raise ContractError(f"Routing needs at least one iteration, got {iterations}.")
    u_hat = as_tensor(votes)
    single = u_hat.ndim == 3
    if single:
        u_hat = u_hat.reshape((1,) + u_hat.shape)
    if u_hat.ndim != 4:
        raise ShapeError(f"Votes are [num_in, num_out, dim] or batched, got shape {u_hat.shape}.")
    b, num_in, num_out, dim = u_hat.shape

    logits = np.zeros((b, num_in, num_out), dtype=u_hat.dtype)
    logits_t = None
    v = None
    for it in range(int(iterations)):
        current = logits_t if logits_t is not None else Tensor(logits)
        c = softmax(current, axis=-1)
        if trace is not None:
            trace.states.append(RoutingState(logits=np.array(current.data), couplings=np.array(c.data)))
        s = (c.reshape((b, num_in, num_out, 1)) * u_hat).sum(axis=1)
        v = squash(s)
        if it == iterations - 1:
            break
        if differentiable:
            agreement = (u_hat * v.reshape((b, 1, num_out, dim))).sum(axis=-1)
            logits_t = current + agreement
        else:
            logits = logits + np.sum(u_hat.data * v.data[:, None, :, :], axis=-1)
    return v.reshape(v.shape[1:]) if single else v


def _one_hot(labels, num_classes, batch):
    labels = np.asarray(labels)
    if labels.dtype.kind in "iu":
        flat = labels.reshape(-1)
        if flat.size != batch:
            raise LabelError(f"Expected {batch} labels, got {flat.size}.")
        if np.any(flat < 0) or np.any(flat >= num_classes):
            raise LabelError(f"Labels must lie in [0, {num_classes}), got {flat.tolist()}.")
        return np.eye(num_classes)[flat]
    onehot = labels.astype(np.float64).reshape(batch, -1)
    if onehot.shape[1] != num_classes:
        raise LabelError(f"One-hot labels have {onehot.shape[1]} entries, expected {num_classes}.")
    if not np.all((onehot == 0) | (onehot == 1)) or not np.all(onehot.sum(axis=1) == 1):
        raise LabelError("One-hot labels need exactly one 1 per item.")
    return onehot


def margin_loss(v, labels, m_plus=M_PLUS, m_minus=M_MINUS, down_weight=DOWN_WEIGHT):
    """
    Sum over classes of T_k max(0, m+ - |v_k|)^2 + lambda (1 - T_k) max(0, |v_k| - m-)^2.

    ``labels`` are one-hot rows or integer class indices. For a batch the
    per-item sums are averaged.
    """
    v = as_tensor(v)
    single = v.ndim == 2
    if single:
        v = v.reshape((1,) + v.shape)
    b, num_classes = v.shape[0], v.shape[1]
    target = _one_hot(labels, num_classes, b).astype(v.dtype)
    lengths = capsule_lengths(v)
    present = target * relu(m_plus - lengths) ** 2
    absent = down_weight * (1.0 - target) * relu(lengths - m_minus) ** 2
    per_item = (present + absent).sum(axis=1)
    return per_item.sum() if single else per_item.mean()


def class_prediction(v):
    """Index of the longest capsule (lowest index on ties); an array for batched input."""
    data = np.asarray(getattr(v, "data", v))
    norms = np.linalg.norm(data, axis=-1)
    return int(np.argmax(norms)) if norms.ndim == 1 else np.argmax(norms, axis=-1)
