"""Gated cross-modal fusion of text tokens with temporal video context.

Text tokens query the video context through multi-head attention; a
per-token sigmoid gate computed from the text alone scales the attended
vectors before a residual LayerNorm, and a residual FFN produces the fused
embeddings ``Z``::

    A   = softmax((X_t W_Q)(H_v W_K)^T / sqrt(d_k)) (H_v W_V)   per head, then W_O
    g_i = sigmoid(W_g x_i + b_g)
    H_t = LayerNorm(X_t + g * A)
    Z   = LayerNorm(H_t + FFN(H_t))
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .module import Module, parameter, uniform
from .tensor import Tensor

GATE_MODES = ("learned", "closed", "open")


class CrossAttention(Module):
    """Projections are stored (in, out) so that queries are ``X_t @ W_Q``."""

    def __init__(self, model_dim, context_dim, n_heads=4, rng=None):
        if n_heads < 1 or model_dim % n_heads or model_dim // n_heads == 0:
            raise ConfigError(f"model dim {model_dim} is not divisible into {n_heads} heads")
        rng = np.random.default_rng(0) if rng is None else rng
        self.model_dim = model_dim
        self.context_dim = context_dim
        self.n_heads = n_heads
        self.d_k = model_dim // n_heads
        self.W_Q = parameter(uniform(rng, (model_dim, model_dim), 1 / math.sqrt(model_dim)))
        self.W_K = parameter(uniform(rng, (context_dim, model_dim), 1 / math.sqrt(context_dim)))
        self.W_V = parameter(uniform(rng, (context_dim, model_dim), 1 / math.sqrt(context_dim)))
        self.W_O = parameter(uniform(rng, (model_dim, model_dim), 1 / math.sqrt(model_dim)))


class Gate(Module):
    def __init__(self, model_dim, rng=None, scale=0.01):
        rng = np.random.default_rng(0) if rng is None else rng
        self.W_g = parameter(uniform(rng, (model_dim, model_dim), scale))
        self.b_g = parameter(np.zeros(model_dim))


class FeedForward(Module):
    def __init__(self, model_dim, expansion=4, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        hidden = expansion * model_dim
        self.W1 = parameter(uniform(rng, (hidden, model_dim), 1 / math.sqrt(model_dim)))
        self.b1 = parameter(np.zeros(hidden))
        self.W2 = parameter(uniform(rng, (model_dim, hidden), 1 / math.sqrt(hidden)))
        self.b2 = parameter(np.zeros(model_dim))

    def __call__(self, x):
        return T.linear(tanh(T.linear(x, self.W1, self.b1)), self.W2, self.b2)


def tanh(x):
    return T.tanh(x)


class LayerNorm(Module):
    def __init__(self, dim):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def __call__(self, x):
        return T.layernorm(x, self.gain, self.bias)


@dataclass
class FusionState:
    H_v: Tensor
    attn_weights: Tensor
    gates: Tensor
    A: Tensor
    gated: Tensor
    H_t: Tensor
    Z: Tensor


def _split_heads(x, n_heads):
    b, n, d = x.shape
    return T.transpose(T.reshape(x, (b, n, n_heads, d // n_heads)), (0, 2, 1, 3))


def cross_attend(p, X_t, H_v, key_mask=None):
    """Multi-head attention of text tokens over video positions.

    Accepts (L, dm) / (T, H) or batched (B, L, dm) / (B, T, H) inputs and
    returns ``(A, weights)`` with weights shaped (..., n_heads, L, T).
    ``key_mask`` (B, T) marks usable video positions.
    """
    if p.d_k == 0 or p.n_heads * p.d_k != p.model_dim:
        raise ConfigError(f"head dim mismatch: {p.n_heads} x {p.d_k} != {p.model_dim}")
    X_t, H_v = T.as_tensor(X_t), T.as_tensor(H_v)
    squeeze = X_t.ndim == 2
    if squeeze:
        X_t = T.reshape(X_t, (1,) + X_t.shape)
        H_v = T.reshape(H_v, (1,) + H_v.shape)
    if X_t.shape[1] < 1 or H_v.shape[1] < 1:
        raise ShapeError("cross_attend needs at least one text token and one video position")
    if X_t.shape[-1] != p.model_dim or H_v.shape[-1] != p.context_dim:
        raise ShapeError(f"cross_attend: text {X_t.shape} / video {H_v.shape} do not fit "
                         f"(dm={p.model_dim}, context={p.context_dim})")
    q = _split_heads(T.matmul(X_t, p.W_Q), p.n_heads)
    k = _split_heads(T.matmul(H_v, p.W_K), p.n_heads)
    v = _split_heads(T.matmul(H_v, p.W_V), p.n_heads)
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(p.d_k))
    if key_mask is not None:
        bias = np.where(np.asarray(key_mask, dtype=bool), 0.0, -np.inf)[:, None, None, :]
        scores = scores + bias
    weights = T.softmax(scores)
    heads = T.matmul(weights, v)
    b, _, L, _ = heads.shape
    merged = T.reshape(T.transpose(heads, (0, 2, 1, 3)), (b, L, p.model_dim))
    A = T.matmul(merged, p.W_O)
    if squeeze:
        return T.reshape(A, A.shape[1:]), T.reshape(weights, weights.shape[1:])
    return A, weights


def gate_values(g, X_t, mode="learned"):
    if mode == "learned":
        return T.sigmoid(T.linear(X_t, g.W_g, g.b_g))
    if mode == "closed":
        return Tensor(np.zeros(X_t.shape))
    if mode == "open":
        return Tensor(np.ones(X_t.shape))
    raise ConfigError(f"unknown gate mode {mode!r}; expected one of {GATE_MODES}")


def gate_and_fuse(g, X_t, A, norm, mode="learned"):
    """Returns ``(H_t, gates, gated)``; gates depend on the text tokens only."""
    X_t, A = T.as_tensor(X_t), T.as_tensor(A)
    if X_t.shape != A.shape:
        raise ShapeError(f"gate_and_fuse: text {X_t.shape} and attention {A.shape} differ")
    gates = gate_values(g, X_t, mode)
    gated = gates * A
    return norm(X_t + gated), gates, gated


class GatedFusion(Module):
    def __init__(self, model_dim, context_dim, n_heads=4, ffn_expansion=4, rng=None,
                 gate_mode="learned"):
        if gate_mode not in GATE_MODES:
            raise ConfigError(f"unknown gate mode {gate_mode!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.gate_mode = gate_mode
        self.attn = CrossAttention(model_dim, context_dim, n_heads, rng)
        self.gate = Gate(model_dim, rng)
        self.norm1 = LayerNorm(model_dim)
        self.ffn = FeedForward(model_dim, ffn_expansion, rng)
        self.norm2 = LayerNorm(model_dim)

    def __call__(self, X_t, H_v, key_mask=None):
        return fusion_block(self, X_t, H_v, key_mask=key_mask)


def fusion_block(p, X_t, H_v, key_mask=None):
    H_v = T.as_tensor(H_v)
    A, weights = cross_attend(p.attn, X_t, H_v, key_mask=key_mask)
    H_t, gates, gated = gate_and_fuse(p.gate, X_t, A, p.norm1, p.gate_mode)
    Z = p.norm2(H_t + p.ffn(H_t))
    return FusionState(H_v=H_v, attn_weights=weights, gates=gates, A=A, gated=gated,
                       H_t=H_t, Z=Z)
