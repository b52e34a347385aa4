"""A small reverse-mode autodiff over float64 numpy arrays.

Every op records its parents and a closure that maps the output gradient to parent
gradients; ``Tensor.backward`` replays those closures in reverse topological order.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NumericFaultError
from . import kernels

BCE_EPS = 1e-7


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def item(self) -> float:
        return float(self.data)

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _checked(data, where):
    if not np.all(np.isfinite(data)):
        raise NumericFaultError(f"non-finite value produced by {where}")
    return data


def _op(data, parents, backward, where):
    return Tensor(_checked(data, where), _parents=tuple(parents), _backward=backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def neg(a) -> Tensor:
    return _op(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def exp(a) -> Tensor:
    out = np.exp(a.data)
    return _op(out, (a,), lambda g: (g * out,), "exp")


def reshape(a, shape) -> Tensor:
    return _op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes) -> Tensor:
    inv = np.argsort(axes)
    return _op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def concat(ts, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _op(
        np.concatenate([t.data for t in ts], axis=axis),
        ts,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
        "concat",
    )


def take(a, idx, axis=0) -> Tensor:
    """Gather along an axis; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, (slice(None),) * axis + (idx,), g)
        return (out,)

    return _op(np.take(a.data, idx, axis=axis), (a,), back, "take")


def scatter_rows(a, idx, n) -> Tensor:
    """Place rows of a at positions idx of an (n, ...) zero tensor."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((n,) + a.shape[1:])
    out[idx] = a.data
    return _op(out, (a,), lambda g: (g[idx],), "scatter_rows")


def tsum(a, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.full_like(a.data, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _op(out, (a,), back, "sum")


def mean(a) -> Tensor:
    n = a.data.size
    return _op(a.data.mean(), (a,), lambda g: (np.full_like(a.data, g / n),), "mean")


def segment_sum(a, seg, nseg) -> Tensor:
    """Sum a 1-D tensor into nseg buckets given per-element bucket ids."""
    seg = np.asarray(seg, dtype=np.int64)
    return _op(np.bincount(seg, weights=a.data, minlength=nseg), (a,), lambda g: (g[seg],), "segment_sum")


def dense(x, W, b) -> Tensor:
    y, cache = kernels.dense_forward(W.data, b.data, x.data)

    def back(g):
        gW, gb, gx = kernels.dense_backward(cache, g)
        return gx, gW, gb

    return _op(y, (x, W, b), back, "dense")


def conv3d(x, W, b, stride=2, pad=1) -> Tensor:
    y, cache = kernels.conv3d_forward(W.data, b.data, x.data, stride, pad)

    def back(g):
        gW, gb, gx = kernels.conv3d_backward(cache, g, x.requires_grad)
        return gx, gW, gb

    return _op(y, (x, W, b), back, "conv3d")


def leaky_relu(a, slope=0.01) -> Tensor:
    pos = a.data > 0
    return _op(np.where(pos, a.data, slope * a.data), (a,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def _sigmoid(z):
    out = np.empty_like(z)
    p = z >= 0
    out[p] = 1.0 / (1.0 + np.exp(-z[p]))
    e = np.exp(z[~p])
    out[~p] = e / (1.0 + e)
    return out


def sigmoid(a) -> Tensor:
    s = _sigmoid(a.data)
    return _op(s, (a,), lambda g: (g * s * (1 - s),), "sigmoid")


def max_over_set(a, axis=0) -> Tensor:
    """Coordinatewise maximum over one axis; ties route gradient to the lowest index."""
    if a.shape[axis] == 0:
        raise DimensionError("max over an empty set")
    arg = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _op(out, (a,), back, "max_over_set")


def instance_norm(x, eps=1e-5) -> Tensor:
    """Normalize each (sample, channel) over its spatial extent; x: (N, C, ...)."""
    axes = tuple(range(2, x.data.ndim))
    m = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - m
    var = (xc**2).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = np.prod([x.shape[a] for a in axes])

    def back(g):
        gm = g.mean(axis=axes, keepdims=True)
        gx = inv * (g - gm - xhat * (g * xhat).sum(axis=axes, keepdims=True) / n)
        return (gx,)

    return _op(xhat, (x,), back, "instance_norm")


def bce(pred, label, weight=1.0) -> Tensor:
    """Elementwise -w * (y ln p + (1 - y) ln(1 - p)) with p clamped to [eps, 1 - eps]."""
    y = np.asarray(label, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64)
    p = np.clip(pred.data, BCE_EPS, 1 - BCE_EPS)
    inside = (pred.data > BCE_EPS) & (pred.data < 1 - BCE_EPS)
    out = -w * (y * np.log(p) + (1 - y) * np.log(1 - p))

    def back(g):
        d = w * ((1 - y) / (1 - p) - y / p)
        return (np.where(inside, g * d, 0.0),)

    return _op(out, (pred,), back, "bce")


def bce_logits(z, label, weight=1.0) -> Tensor:
    """bce(sigmoid(z), label, weight) evaluated from logits, without the clamp.

    softplus(z) - y z equals -y ln s - (1 - y) ln(1 - s) for labels in {0, 1}; the
    gradient w (s - y) never vanishes on confidently wrong predictions.
    """
    y = np.asarray(label, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64)
    zd = z.data
    soft = np.maximum(zd, 0) + np.log1p(np.exp(-np.abs(zd)))
    s = _sigmoid(zd)
    return _op(w * (soft - y * zd), (z,), lambda g: (g * w * (s - y),), "bce_logits")


def kl_diag_gaussian(mu, logvar) -> Tensor:
    """0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)."""
    e = np.exp(logvar.data)
    out = 0.5 * np.sum(mu.data**2 + e - 1 - logvar.data)
    return _op(out, (mu, logvar), lambda g: (g * mu.data, g * 0.5 * (e - 1)), "kl")
