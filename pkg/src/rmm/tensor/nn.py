"""Parameter containers and the fan-in initializer."""
from __future__ import annotations

import numpy as np

from .core import Tensor
from .ops import conv2d, fully_connected


def fan_in_uniform(shape, fan_in, rng):
    """Uniform in +-sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Attribute-walking parameter registry.

    Parameters are :class:`Tensor` attributes with ``requires_grad``; child
    modules may be attributes or live in lists.
    """

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if strict and (missing or extra):
            raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for name, p in params.items():
            if name in state:
                arr = np.asarray(state[name], dtype=p.data.dtype)
                if arr.shape != p.shape:
                    raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
                p.data = arr.copy()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=None, bias_init=0.0):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.weight = Tensor(fan_in_uniform((cout, cin, k, k), cin * k * k, rng), requires_grad=True)
        self.bias = Tensor(np.full(cout, bias_init, dtype=np.float64), requires_grad=True)

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.pad)


class Linear(Module):
    def __init__(self, din, dout, rng, bias_init=0.0):
        self.weight = Tensor(fan_in_uniform((dout, din), din, rng), requires_grad=True)
        self.bias = Tensor(np.full(dout, bias_init, dtype=np.float64), requires_grad=True)

    def __call__(self, x):
        return fully_connected(x, self.weight, self.bias)
