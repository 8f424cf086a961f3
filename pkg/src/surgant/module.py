"""Parameter containers with ordered, dotted parameter names."""
from __future__ import annotations

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor


def parameter(data, name=None, trainable=True):
    return Tensor(data, requires_grad=trainable, name=name)


def uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Walks attributes in definition order to find tensors and submodules."""

    training = True

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, (Tensor, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(
                    isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_tensors(self, prefix=""):
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            else:
                yield from value.named_tensors(name + ".")

    def named_parameters(self):
        """Tensors the optimiser updates (``requires_grad`` set)."""
        return [(n, t) for n, t in self.named_tensors() if t.requires_grad]

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def modules(self):
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for _, t in self.named_tensors():
            t.grad = None

    def state_dict(self):
        return {n: t.data.copy() for n, t in self.named_tensors()}

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_tensors())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise CheckpointError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, value in state.items():
            if name not in own:
                continue
            t = own[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != t.shape:
                raise CheckpointError(f"{name}: shape {value.shape} != {t.shape}")
            t.data[...] = value
