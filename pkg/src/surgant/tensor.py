"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded onto the active :class:`Graph` (a thread-local tape)
only when at least one input requires a gradient. Outside a ``with Graph()``
block nothing is recorded, which is how inference runs.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with Graph() as g:
    ...     loss = sum(matmul(w, w))
    >>> g.backward(loss)
    >>> w.grad.tolist()
    [[4.0, 4.0], [4.0, 4.0]]
"""
from __future__ import annotations

import itertools
import threading

import numpy as np

from .errors import ConfigError, GraphError, InputError, NumericError, ShapeError

LAYERNORM_EPS = 1e-5

_local = threading.local()
_ids = itertools.count()


def _stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_graph():
    stack = _stack()
    return stack[-1] if stack else None


class Graph:
    """Ordered record of operations; backward replays it in reverse."""

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, parents, backward):
        if self.consumed:
            raise GraphError("graph already consumed by backward(); record a new one")
        self.nodes.append((out, parents, backward))

    def backward(self, loss, grad=None):
        if self.consumed:
            raise GraphError("backward() called twice on the same graph")
        self.consumed = True
        if grad is None:
            if loss.data.size != 1:
                raise ShapeError(f"implicit gradient needs a scalar loss, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        loss.grad = np.asarray(grad, dtype=np.float64).reshape(loss.shape)
        for out, parents, backward in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            grads = backward(g)
            for p, gp in zip(parents, grads):
                if gp is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = np.array(gp, dtype=np.float64, copy=True).reshape(p.shape)
                else:
                    p.grad = p.grad + gp


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.is_leaf = True
        self.node_id = next(_ids)

    @classmethod
    def _wrap(cls, data, requires_grad=False):
        t = cls.__new__(cls)
        t.data = data if data.dtype == np.float64 else data.astype(np.float64)
        t.grad = None
        t.requires_grad = requires_grad
        t.name = None
        t.is_leaf = not requires_grad
        t.node_id = next(_ids)
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data, parents, backward):
    """Create the output tensor of a custom op and record it when needed.

    ``backward(grad_out)`` must return one gradient (or None) per parent.
    """
    parents = tuple(parents)
    graph = current_graph()
    needs = graph is not None and any(p.requires_grad for p in parents)
    out = Tensor._wrap(np.asarray(data), requires_grad=needs)
    if needs:
        graph.record(out, parents, backward)
    return out


def unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return record(a.data + b.data, (a, b),
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return record(a.data - b.data, (a, b),
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return record(a.data * b.data, (a, b),
                  lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def scale(a, c):
    c = float(c)
    return record(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a):
    # split by sign so neither branch overflows exp()
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return record(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.data)
    return record(out, (a,), lambda g: (g * (1.0 - out * out),))


# ------------------------------------------------------------------ shaping

def reshape(a, shape):
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i, j):
    return record(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return record(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def take(a, index, axis=0):
    """Gather entries along ``axis``; duplicate indices accumulate gradient."""
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape
    axis = axis % a.ndim

    def backward(g):
        full = np.zeros(shape)
        moved = np.moveaxis(full, axis, 0)
        k = index.ndim
        np.add.at(moved, index, np.moveaxis(g, list(range(axis, axis + k)), list(range(k))))
        return (full,)

    return record(np.take(a.data, index, axis=axis), (a,), backward)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ------------------------------------------------------------------- linear

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return record(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = (x, weight)
    if bias is not None:
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        gx = g @ weight.data
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return record(out, parents, backward)


# ------------------------------------------------------------ normalisation

def softmax(a):
    """Softmax over the last axis with per-row max subtraction.

    ``-inf`` entries are treated as masked out; NaN is rejected.
    """
    x = a.data
    if np.isnan(x).any():
        raise NumericError("softmax input contains NaN")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return record(out, (a,), backward)


softmax_rows = softmax


def layernorm(x, gain, bias, eps=LAYERNORM_EPS):
    """Normalise over the last axis with the biased variance."""
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layernorm needs a feature dim >= 2, got {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, d)
        return gx, (g2 * xhat.reshape(-1, d)).sum(axis=0), g2.sum(axis=0)

    return record(out, (x, gain, bias), backward)


# --------------------------------------------------------------- stochastic

def dropout_mask(shape, p, seed):
    """Survivor mask scaled by 1/(1-p); deterministic in (p, seed)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return (rng.random(shape) >= p) / (1.0 - p)


def dropout(x, p, seed=None, training=True):
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    return mul(x, dropout_mask(x.shape, p, seed))


# -------------------------------------------------------------- embeddings

def embedding(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range for vocabulary of size {vocab}")
    return take(table, ids, axis=0)


def cross_entropy(logits, targets, mask=None):
    """Mean negative log-likelihood over positions where ``mask`` is true."""
    v = logits.shape[-1]
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets {targets.shape} do not match logits {logits.shape}")
    mask = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    live = targets[mask]
    if live.size and (live.min() < 0 or live.max() >= v):
        raise IndexError(f"label index out of range for vocabulary of size {v}")
    count = int(mask.sum())
    if count == 0:
        raise InputError("cross_entropy: every position is masked")
    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    safe = np.where(mask, targets, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / count

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, safe[..., None],
                          np.take_along_axis(grad, safe[..., None], axis=-1) - 1.0, axis=-1)
        grad *= (mask / count)[..., None]
        return (grad * g,)

    return record(np.asarray(loss), (logits,), backward)
