"""Dense tensor with a reverse-mode tape.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a node (parents + a closure mapping the output gradient to
parent gradients). :func:`backward` replays those closures in reverse
topological order.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DimensionError

DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            keep = isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64)
            dtype = data.dtype if keep else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other, scalar = _coerce(self, other)
        if scalar:
            return _make(self.data + other, (self,), lambda g: (g,), "add_scalar")
        return _make(self.data + other.data, (self, other),
                     lambda g: (_unscalar(g, self), _unscalar(g, other)), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other, scalar = _coerce(self, other)
        if scalar:
            return _make(self.data - other, (self,), lambda g: (g,), "sub_scalar")
        return _make(self.data - other.data, (self, other),
                     lambda g: (_unscalar(g, self), _unscalar(-g, other)), "sub")

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other, scalar = _coerce(self, other)
        if scalar:
            return _make(self.data * other, (self,), lambda g: (g * other,), "mul_scalar")
        a, b = self.data, other.data
        return _make(a * b, (self, other),
                     lambda g: (_unscalar(g * b, self), _unscalar(g * a, other)), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other, scalar = _coerce(self, other)
        if scalar:
            return _make(self.data / other, (self,), lambda g: (g / other,), "div_scalar")
        a, b = self.data, other.data
        return _make(a / b, (self, other),
                     lambda g: (_unscalar(g / b, self), _unscalar(-g * a / (b * b), other)), "div")

    def __rtruediv__(self, other):
        if isinstance(other, Tensor):
            return other / self
        b = self.data
        return _make(other / b, (self,), lambda g: (-g * other / (b * b),), "rdiv_scalar")

    def __neg__(self):
        return _make(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise ContractError("tensor exponents are not supported")
        a = self.data
        return _make(a ** p, (self,), lambda g: (g * p * a ** (p - 1),), "pow")

    # -- elementwise functions ----------------------------------------------
    def exp(self):
        out = np.exp(self.data)
        return _make(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        a = self.data
        return _make(np.log(a), (self,), lambda g: (g / a,), "log")

    def sqrt(self):
        out = np.sqrt(self.data)
        return _make(out, (self,), lambda g: (g * 0.5 / out,), "sqrt")

    def tanh(self):
        out = np.tanh(self.data)
        return _make(out, (self,), lambda g: (g * (1.0 - out * out),), "tanh")

    def sigmoid(self):
        out = _stable_sigmoid(self.data)
        return _make(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def abs(self):
        s = np.sign(self.data)
        return _make(np.abs(self.data), (self,), lambda g: (g * s,), "abs")

    # -- reductions -----------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _make(out, (self,), bw, "sum")

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis=None, keepdims=False):
        return _extreme(self, axis, keepdims, np.argmax, "max")

    def min(self, axis=None, keepdims=False):
        return _extreme(self, axis, keepdims, np.argmin, "min")

    # -- shape ------------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return _make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return _make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        shape = self.shape

        def bw(g):
            full = np.zeros(shape, dtype=g.dtype)
            np.add.at(full, idx, g) if _has_fancy(idx) else full.__setitem__(idx, g)
            return (full,)

        return _make(self.data[idx], (self,), bw, "slice")

    def backward(self):
        backward(self)


# ---------------------------------------------------------------------------
def _not_scalar(t):
    raise ContractError(f"item() on non-scalar tensor of shape {t.shape}")


def _has_fancy(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _coerce(self, other):
    if isinstance(other, Tensor):
        if other.shape != self.shape and other.size != 1 and self.size != 1:
            raise DimensionError(f"elementwise shapes differ: {self.shape} vs {other.shape}; "
                                 "use broadcast_to/broadcast_spatial explicitly")
        return other, False
    if np.ndim(other) == 0:
        return float(other), True
    raise DimensionError("elementwise operand must be a Tensor of identical shape or a scalar")


def _unscalar(g, t):
    """Reduce a gradient to the shape of ``t`` (only the size-1 case is broadcast)."""
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _extreme(t, axis, keepdims, argfn, name):
    a = t.data
    if axis is None:
        flat = argfn(a.reshape(-1))
        out = a.reshape(-1)[flat]

        def bw(g):
            full = np.zeros(a.size, dtype=a.dtype)
            full[flat] = g
            return (full.reshape(a.shape),)

        return _make(np.asarray(out), (t,), bw, name)
    idx = np.expand_dims(argfn(a, axis=axis), axis)
    out = np.take_along_axis(a, idx, axis=axis)

    def bw(g):
        full = np.zeros_like(a)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(full, idx, gg, axis=axis)
        return (full,)

    return _make(out if keepdims else np.squeeze(out, axis), (t,), bw, name)


def _make(data, parents, backward_fn, op):
    """Create an output tensor and, if any parent needs gradients, record the node."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out.op = op
    return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Graph:
    """Recorded operations reachable from ``loss`` in topological order."""

    loss: Tensor
    nodes: list = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss):
        order, seen = [], set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(loss=loss, nodes=order)

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]


def backward(loss, graph=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring gradients."""
    if isinstance(loss, Graph):
        graph, loss = loss, loss.loss
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return graph
    graph = graph or Graph.from_loss(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    return graph
