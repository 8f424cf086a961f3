"""Low-rank adapters around frozen linear layers."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .module import Module, parameter, uniform

DEFAULT_RANK = 8
DEFAULT_ALPHA = 16.0
DEFAULT_DROPOUT = 0.1


class Linear(Module):
    """Plain affine layer, weight stored (out, in)."""

    def __init__(self, in_dim, out_dim, rng=None, bias=True, trainable=True):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = parameter(uniform(rng, (out_dim, in_dim), 1 / math.sqrt(in_dim)),
                                trainable=trainable)
        self.bias = parameter(np.zeros(out_dim), trainable=trainable) if bias else None

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class LoraAdapter(Module):
    """``y = x W^T + b + (alpha / r) * dropout(x) A^T B^T`` with W and b frozen.

    ``B`` starts at zero so a freshly wrapped layer reproduces the base layer
    bit for bit. ``dropout_seed`` is advanced by the trainer each step.
    """

    def __init__(self, base, r=DEFAULT_RANK, alpha=DEFAULT_ALPHA, dropout=DEFAULT_DROPOUT,
                 rng=None, layer_id=""):
        if r < 1 or r > min(base.in_dim, base.out_dim):
            raise ConfigError(
                f"LoRA rank {r} must lie in [1, {min(base.in_dim, base.out_dim)}] "
                f"for a {base.out_dim}x{base.in_dim} layer")
        if not 0.0 <= dropout < 1.0:
            raise ConfigError(f"LoRA dropout must lie in [0, 1), got {dropout}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.layer_id = layer_id
        self.in_dim, self.out_dim = base.in_dim, base.out_dim
        self.weight = base.weight
        self.bias = base.bias
        self.weight.requires_grad = False
        if self.bias is not None:
            self.bias.requires_grad = False
        self.r = r
        self.alpha = float(alpha)
        self.p = dropout
        self.lora = _LowRank(r, base.in_dim, base.out_dim, rng)
        self.dropout_seed = None

    @property
    def scaling(self):
        return self.alpha / self.r

    def trainable_count(self):
        return self.r * (self.in_dim + self.out_dim)

    def __call__(self, x):
        base = T.linear(x, self.weight, self.bias)
        if self.training and self.p > 0.0:
            x = T.dropout(x, self.p, seed=self.dropout_seed, training=True)
        low = T.linear(T.linear(x, self.lora.A), self.lora.B)
        return base + T.scale(low, self.scaling)

    def merge(self):
        return merge(self)


class _LowRank(Module):
    # holds A and B so checkpoint names read "<layer>.lora.A" / "<layer>.lora.B"
    def __init__(self, r, in_dim, out_dim, rng):
        self.A = parameter(uniform(rng, (r, in_dim), 1 / math.sqrt(in_dim)))
        self.B = parameter(np.zeros((out_dim, r)))


def wrap(layer, r=DEFAULT_RANK, alpha=DEFAULT_ALPHA, dropout=DEFAULT_DROPOUT, rng=None,
         layer_id=""):
    return LoraAdapter(layer, r=r, alpha=alpha, dropout=dropout, rng=rng, layer_id=layer_id)


def merge(adapter):
    """Dense weight equivalent to the adapter with dropout off."""
    return adapter.weight.data + adapter.scaling * (adapter.lora.B.data @ adapter.lora.A.data)
