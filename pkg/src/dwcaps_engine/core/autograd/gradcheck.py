import numpy as np

from dwcaps_engine.core.autograd.tensor import Tensor, backward, make_rng, no_grad


def _leaves(arrays):
    return [Tensor(a, requires_grad=True) for a in arrays]


def _evaluate(fn, arrays, as_list):
    with no_grad():
        tensors = [Tensor(a) for a in arrays]
        out = fn(tensors) if as_list else fn(tensors[0])
    return out.item()


def finite_difference_check(fn, x, h=1e-5, coords=None, seed=0):
    """
    Compare reverse-mode gradients of a scalar function with central differences.

    Parameters
    ----------
    fn: callable
        Deterministic scalar-valued function. Receives a Tensor when ``x`` is a
        Tensor, or a list of Tensors when ``x`` is a list/tuple.
    x: Tensor | list of Tensor
        Point at which gradients are compared.
    h: float
        Central-difference step.
    coords: int, optional
        When set, only this many coordinates per input (drawn with ``seed``)
        are compared; every coordinate is compared otherwise.

    Returns
    -------
    float
        max over coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    as_list = isinstance(x, (list, tuple))
    arrays = [np.array(t.data if isinstance(t, Tensor) else t, dtype=np.float64)
              for t in (x if as_list else [x])]

    leaves = _leaves(arrays)
    out = fn(leaves) if as_list else fn(leaves[0])
    backward(out)
    analytic = [leaf.grad.data for leaf in leaves]

    rng = make_rng(seed)
    worst = 0.0
    for k, base in enumerate(arrays):
        flat_count = base.size
        if coords is not None and coords < flat_count:
            picks = np.sort(rng.choice(flat_count, size=coords, replace=False))
        else:
            picks = np.arange(flat_count)
        for flat in picks:
            index = np.unravel_index(flat, base.shape)
            original = base[index]
            base[index] = original + h
            plus = _evaluate(fn, arrays, as_list)
            base[index] = original - h
            minus = _evaluate(fn, arrays, as_list)
            base[index] = original
            numeric = (plus - minus) / (2.0 * h)
            a = float(analytic[k][index])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
