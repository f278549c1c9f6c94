"""Minimal reverse-mode autodiff over numpy float64 arrays.

Everything downstream (encoder, transducer head, losses) is built from the
ops in this module.  Forward ops are pure and deterministic; gradients are
accumulated into ``Tensor.grad`` by :func:`backward` and stay there until
reset, so repeated backward passes accumulate.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, MaskError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, _as_tensor(1.0 / other))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, bwd):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(np.broadcast_to(g, t.data.shape), dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b):
    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(a.data + b.data, (a, b), bwd)


def sub(a, b):
    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(a.data - b.data, (a, b), bwd)


def mul(a, b):
    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), bwd)


def power(a, p):
    if isinstance(p, Tensor):
        raise ContractError("power: exponent must be a python scalar")
    out_data = a.data**p

    def bwd(g):
        _accum(a, g * p * a.data ** (p - 1))

    return _node(out_data, (a,), bwd)


def matmul(a, b):
    """Matrix product over the last two axes with numpy batch broadcasting."""
    if a.data.ndim < 1 or b.data.ndim < 2:
        raise ShapeError(f"matmul: bad ranks {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ {a.data.shape} @ {b.data.shape}")

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _node(np.matmul(a.data, b.data), (a, b), bwd)


def swap_axes(a, ax1, ax2):
    def bwd(g):
        _accum(a, np.swapaxes(g, ax1, ax2))

    return _node(np.swapaxes(a.data, ax1, ax2), (a,), bwd)


def reshape(a, shape):
    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), bwd)


def getitem(a, idx):
    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accum(a, full)

    return _node(a.data[idx], (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def tsum(a, axis=None, keepdims=False):
    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def tanh(a):
    out_data = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out_data**2))

    return _node(out_data, (a,), bwd)


def sigmoid(a):
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), bwd)


def relu(a):
    keep = a.data > 0

    def bwd(g):
        _accum(a, g * keep)

    return _node(np.where(keep, a.data, 0.0), (a,), bwd)


def exp(a):
    out_data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out_data)

    return _node(out_data, (a,), bwd)


def log(a):
    def bwd(g):
        _accum(a, g / a.data)

    return _node(np.log(a.data), (a,), bwd)


# ---------------------------------------------------------------------------
# composites


def softmax(a, axis=-1):
    """Numerically stable softmax; the row max is treated as a constant shift."""
    shift = np.max(a.data, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = exp(a - Tensor(shift))
    return e / tsum(e, axis=axis, keepdims=True)


def log_softmax(a, axis=-1):
    shift = np.max(a.data, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    centered = a - Tensor(shift)
    return centered - log(tsum(exp(centered), axis=axis, keepdims=True))


def layer_norm(x, gain, bias, eps=1e-5):
    m = tmean(x, axis=-1, keepdims=True)
    centered = x - m
    var = tmean(centered * centered, axis=-1, keepdims=True)
    return centered * power(var + Tensor(eps), -0.5) * gain + bias


@dataclass
class AttentionMask:
    """Boolean [query x key] matrix; True marks an attendable key.

    Leading batch dimensions are allowed.  Every query row must keep at
    least one attendable key.
    """

    allowed: np.ndarray

    def __post_init__(self):
        self.allowed = np.asarray(self.allowed, dtype=bool)
        if self.allowed.ndim < 2:
            raise ShapeError("AttentionMask must be at least 2-D")
        if not self.allowed.any(axis=-1).all():
            raise MaskError("attention mask has a fully masked query row")

    @property
    def query_len(self):
        return self.allowed.shape[-2]

    @property
    def key_len(self):
        return self.allowed.shape[-1]


def masked_self_attention(q, k, v, mask):
    """Scaled dot-product attention restricted to ``mask.allowed`` keys.

    Masked keys receive exactly zero weight; each output row is a convex
    combination of the allowed value rows.
    """
    if q.data.shape[-1] != k.data.shape[-1]:
        raise ShapeError("q/k model dims differ")
    if k.data.shape[-2] != v.data.shape[-2]:
        raise ShapeError("k/v sequence lengths differ")
    if mask.query_len != q.data.shape[-2] or mask.key_len != k.data.shape[-2]:
        raise ShapeError(
            f"mask {mask.allowed.shape} does not cover q={q.data.shape} k={k.data.shape}"
        )
    scale = 1.0 / np.sqrt(q.data.shape[-1])
    scores = matmul(q, swap_axes(k, -1, -2)) * scale
    bias = np.where(mask.allowed, 0.0, -np.inf)
    weights = softmax(scores + Tensor(bias), axis=-1)
    return matmul(weights, v)


# ---------------------------------------------------------------------------
# backward + gradient checking


def backward(loss):
    """Populate ``grad`` on every reachable tensor from a scalar loss."""
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)


def grad_check(f, params, eps=1e-4):
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic zero-argument callable returning a scalar
    Tensor built from ``params``.
    """
    if eps <= 0:
        raise ContractError("grad_check: eps must be positive")
    first = f().data.copy()
    second = f().data.copy()
    if not np.array_equal(first, second):
        raise ContractError("grad_check: f is not deterministic")

    for p in params.values():
        p.grad = None
    backward(f())

    worst = 0.0
    for p in params.values():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().data)
            flat[i] = orig - eps
            lo = float(f().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
