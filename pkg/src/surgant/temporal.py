"""Bidirectional GRU over per-frame features.

The context row for frame t is the forward state at t plus the backward
state at t (a sum, not a concatenation), so both directions share the hidden
size. Cell convention::

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    c = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * c
"""
from __future__ import annotations

import math

import numpy as np

from . import _kernels
from . import tensor as T
from .errors import EmptyInputError, ShapeError
from .module import Module, parameter, uniform
from .tensor import Tensor

GATE_BLOCKS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


class GruCell(Module):
    def __init__(self, input_dim, hidden_dim, rng=None, zero=False):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        rng = np.random.default_rng(0) if rng is None else rng
        bound = 1.0 / math.sqrt(hidden_dim)

        def init(shape):
            return np.zeros(shape) if zero else uniform(rng, shape, bound)

        for gate in "zrh":
            setattr(self, f"W_{gate}", parameter(init((hidden_dim, input_dim))))
            setattr(self, f"U_{gate}", parameter(init((hidden_dim, hidden_dim))))
            setattr(self, f"b_{gate}", parameter(init((hidden_dim,))))

    def blocks(self):
        return [getattr(self, name) for name in GATE_BLOCKS]


def gru_step(cell, x_t, h_prev):
    """One cell update from tensor primitives; works on (..., D) inputs."""
    if x_t.shape[-1] != cell.input_dim or h_prev.shape[-1] != cell.hidden_dim:
        raise ShapeError(
            f"gru_step: x {x_t.shape} / h {h_prev.shape} do not fit cell "
            f"(D={cell.input_dim}, H={cell.hidden_dim})")
    z = T.sigmoid(T.linear(x_t, cell.W_z) + T.linear(h_prev, cell.U_z) + cell.b_z)
    r = T.sigmoid(T.linear(x_t, cell.W_r) + T.linear(h_prev, cell.U_r) + cell.b_r)
    c = T.tanh(T.linear(x_t, cell.W_h) + T.linear(r * h_prev, cell.U_h) + cell.b_h)
    return (1.0 - z) * h_prev + z * c


def gru_scan(cell, x, reverse=False, backend=None):
    """All hidden states of one direction over x of shape (B, T, D).

    A single recorded op backed by the compiled (or fallback) scan kernel.
    """
    weights = [cell.W_z.data, cell.W_r.data, cell.W_h.data,
               cell.U_z.data, cell.U_r.data, cell.U_h.data,
               cell.b_z.data, cell.b_r.data, cell.b_h.data]
    hs, z, r, c, p = _kernels.gru_scan_forward(x.data, *weights, reverse=reverse, backend=backend)

    def backward(g):
        dx, dWz, dWr, dWh, dUz, dUr, dUh, dbz, dbr, dbh = _kernels.gru_scan_backward(
            g, x.data, *weights[:6], z, r, c, p, reverse=reverse, backend=backend)
        return dx, dWz, dWr, dWh, dUz, dUr, dUh, dbz, dbr, dbh

    parents = (x, cell.W_z, cell.W_r, cell.W_h, cell.U_z, cell.U_r, cell.U_h,
               cell.b_z, cell.b_r, cell.b_h)
    return T.record(hs, parents, backward)


def _scan_composed(cell, x, reverse):
    steps = x.shape[1]
    h = Tensor(np.zeros((x.shape[0], cell.hidden_dim)))
    states = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        h = gru_step(cell, T.take(x, t, axis=1), h)
        states[t] = h
    return T.stack(states, axis=1)


class BiGRU(Module):
    """Forward and backward GRU cells whose states are summed per frame."""

    def __init__(self, input_dim, hidden_dim=None, rng=None, tie_weights=False, zero=False):
        hidden_dim = input_dim if hidden_dim is None else hidden_dim
        rng = np.random.default_rng(0) if rng is None else rng
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.tie_weights = tie_weights
        self.fwd = GruCell(input_dim, hidden_dim, rng, zero=zero)
        if not tie_weights:
            self.bwd = GruCell(input_dim, hidden_dim, rng, zero=zero)

    @property
    def backward_cell(self):
        return self.fwd if self.tie_weights else self.bwd

    def __call__(self, x_v, fused=True, backend=None):
        return encode_bidirectional(self, x_v, fused=fused, backend=backend)


def encode_bidirectional(params, x_v, fused=True, backend=None):
    """Context vectors H^v for frame features of shape (T, D) or (B, T, D).

    ``fused=False`` unrolls :func:`gru_step` through the graph instead of
    calling the scan kernel; both give the same values and gradients.
    """
    x_v = T.as_tensor(x_v)
    squeeze = x_v.ndim == 2
    if squeeze:
        x_v = T.reshape(x_v, (1,) + x_v.shape)
    if x_v.ndim != 3:
        raise ShapeError(f"frame features must be (T, D) or (B, T, D), got {x_v.shape}")
    if x_v.shape[1] == 0:
        raise EmptyInputError("encode_bidirectional needs at least one frame")
    if x_v.shape[2] != params.input_dim:
        raise ShapeError(f"frame dim {x_v.shape[2]} != encoder input dim {params.input_dim}")
    if fused:
        fwd = gru_scan(params.fwd, x_v, reverse=False, backend=backend)
        bwd = gru_scan(params.backward_cell, x_v, reverse=True, backend=backend)
    else:
        fwd = _scan_composed(params.fwd, x_v, reverse=False)
        bwd = _scan_composed(params.backward_cell, x_v, reverse=True)
    out = fwd + bwd
    return T.reshape(out, out.shape[1:]) if squeeze else out
