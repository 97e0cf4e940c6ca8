"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and remembers the operation that
produced it.  Calling :meth:`Tensor.backward` on a scalar walks the graph in
reverse topological order and accumulates gradients into every tensor that
requires them.  Tensors that do not (transitively) depend on a parameter never
get a backward closure, so inference builds no graph.
"""
from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

# Additive mask value for excluded positions before softmax/max.  Finite so
# that ``0 * NEG`` stays 0 in backward passes.
NEG = -1e9


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, parents=(), op="", requires_grad=False):
        if isinstance(data, np.generic):
            data = np.asarray(data)
        elif not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = None

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without grad needs a scalar, got shape {self.data.shape}")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _result(data, parents, op):
    rg = any(p.requires_grad for p in parents)
    out = Tensor(data, parents if rg else (), op, rg)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    nlead = g.ndim - len(shape)
    if nlead > 0:
        g = g.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------
def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = _result(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.shape))
        out._backward = _backward
    return out


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = _result(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))
        out._backward = _backward
    return out


def neg(a):
    out = _result(-a.data, (a,), "neg")
    if out.requires_grad:
        out._backward = lambda g: a._accum(-g)
    return out


def power(a, p):
    out = _result(a.data ** p, (a,), "pow")
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * p * a.data ** (p - 1))
    return out


def exp(a):
    y = np.exp(a.data)
    out = _result(y, (a,), "exp")
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * y)
    return out


def log(a):
    out = _result(np.log(a.data), (a,), "log")
    if out.requires_grad:
        out._backward = lambda g: a._accum(g / a.data)
    return out


def tabs(a):
    out = _result(np.abs(a.data), (a,), "abs")
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * np.sign(a.data))
    return out


def relu(a):
    y = np.maximum(a.data, 0)
    out = _result(y, (a,), "relu")
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * (a.data > 0))
    return out


def _sigmoid(x):
    # tanh form is overflow-free for any finite input
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    y = _sigmoid(a.data)
    out = _result(y, (a,), "sigmoid")
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * y * (1 - y))
    return out


def tanh(a):
    y = np.tanh(a.data)
    out = _result(y, (a,), "tanh")
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * (1 - y * y))
    return out


def dropout(a, rate, rng, train=True):
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` at train time."""
    if not train or rate <= 0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return mul(a, Tensor(keep))


# -- linear algebra and shape ----------------------------------------------
def matmul(a, b):
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _backward(g):
            if a.requires_grad:
                if b.ndim == 1:
                    ga = np.multiply.outer(g, b.data)
                else:
                    ga = g @ np.swapaxes(b.data, -1, -2)
                a._accum(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                if b.ndim == 1:
                    gb = (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(0)
                elif a.ndim == 1:
                    gb = np.multiply.outer(a.data, g)
                else:
                    gb = np.swapaxes(a.data, -1, -2) @ g
                b._accum(_unbroadcast(gb, b.shape))
        out._backward = _backward
    return out


def reshape(a, shape):
    out = _result(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        out._backward = lambda g: a._accum(g.reshape(a.shape))
    return out


def transpose(a, axes=None):
    out = _result(np.transpose(a.data, axes), (a,), "transpose")
    if out.requires_grad:
        inv = None if axes is None else np.argsort(axes)
        out._backward = lambda g: a._accum(np.transpose(g, inv))
    return out


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is None or p is Ellipsis or isinstance(p, (slice, int, np.integer)) for p in parts)


def getitem(a, idx):
    out = _result(a.data[idx], (a,), "getitem")
    if out.requires_grad:
        def _backward(g):
            full = np.zeros_like(a.data)
            if _is_basic(idx):
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            a._accum(full)
        out._backward = _backward
    return out


def embedding(table, ids):
    """Row lookup ``table[ids]`` with scatter-add backward."""
    ids = np.asarray(ids)
    out = _result(table.data[ids], (table,), "embedding")
    if out.requires_grad:
        def _backward(g):
            full = np.zeros_like(table.data)
            np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
            table._accum(full)
        out._backward = _backward
    return out


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def _backward(g):
            for t, gpart in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    t._accum(gpart)
        out._backward = _backward
    return out


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = _result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), "stack")
    if out.requires_grad:
        def _backward(g):
            for i, t in enumerate(tensors):
                if t.requires_grad:
                    t._accum(np.take(g, i, axis=axis))
        out._backward = _backward
    return out


# -- reductions ------------------------------------------------------------
def tsum(a, axis=None, keepdims=False):
    out = _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum")
    if out.requires_grad:
        def _backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))
        out._backward = _backward
    return out


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def _argext(a, axis, fn):
    idx = fn(a.data, axis=axis)
    vals = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis)
    return idx, np.squeeze(vals, axis)


def tmax(a, axis):
    """Maximum along ``axis``; gradient goes to the first maximal element."""
    idx, vals = _argext(a, axis, np.argmax)
    out = _result(vals, (a,), "max")
    if out.requires_grad:
        def _backward(g):
            full = np.zeros_like(a.data)
            np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
            a._accum(full)
        out._backward = _backward
    return out


def tmin(a, axis):
    idx, vals = _argext(a, axis, np.argmin)
    out = _result(vals, (a,), "min")
    if out.requires_grad:
        def _backward(g):
            full = np.zeros_like(a.data)
            np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
            a._accum(full)
        out._backward = _backward
    return out


def logsumexp(a, axis=-1, mask=None):
    """Stable ``log(sum(exp(a)))`` along ``axis``.

    ``mask`` (same shape, boolean) restricts the sum to selected entries.
    Rows with no selected entry are a contract violation.
    """
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("logsumexp over an empty index set")
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    y = np.squeeze(m + np.log(s), axis)
    out = _result(y.astype(a.dtype), (a,), "logsumexp")
    if out.requires_grad:
        def _backward(g):
            a._accum(np.expand_dims(g, axis) * (e / s))
        out._backward = _backward
    return out


def log_softmax(a, axis=-1):
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    out = _result(y, (a,), "log_softmax")
    if out.requires_grad:
        def _backward(g):
            p = np.exp(y)
            a._accum(g - p * g.sum(axis=axis, keepdims=True))
        out._backward = _backward
    return out


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis))


def gather(a, idx, axis=-1):
    """``np.take_along_axis`` with scatter-add backward."""
    idx = np.asarray(idx)
    out = _result(np.take_along_axis(a.data, idx, axis), (a,), "gather")
    if out.requires_grad:
        def _backward(g):
            full = np.zeros_like(a.data)
            # put_along_axis overwrites duplicates, so accumulate via add.at
            nd = a.ndim
            ax = axis % nd
            grids = np.indices(idx.shape, sparse=True)
            index = tuple(idx if i == ax else grids[i] for i in range(nd))
            np.add.at(full, index, g)
            a._accum(full)
        out._backward = _backward
    return out
