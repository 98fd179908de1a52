"""Differentiable operations beyond plain arithmetic.

Spatial ops accept either a single map ``(C, H, W)`` or a batch
``(N, C, H, W)``; the single-map form is promoted to a batch of one and
squeezed back on return.
"""
from __future__ import annotations

import numpy as np

from .. import _kernels
from ..errors import DimensionError
from .core import Tensor, _make, as_tensor


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")
    return x, False


def _unbatch(out, squeeze):
    return out.reshape(out.shape[1:]) if squeeze else out


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """2-D cross-correlation (no kernel flip) with zero padding.

    Output extent is ``(H + 2*pad - k) // stride + 1`` per spatial axis.
    """
    x, squeeze = _batched(x)
    weight = as_tensor(weight)
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"weight must be (C_out, C_in, k, k), got {weight.shape}")
    cout, cin, k, _ = weight.shape
    if k % 2 == 0:
        raise DimensionError(f"kernel size must be odd, got k={k}")
    n, c, h, w = x.shape
    if c != cin:
        raise DimensionError(f"input channels (axis 1) = {c} but weight expects C_in = {cin}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"bias shape {bias.shape} != (C_out,) = ({cout},)")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"input {h}x{w} too small for k={k}, pad={pad}, stride={stride}")

    xd = x.data
    xpad = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    hp, wp = xpad.shape[2:]
    cols = _kernels.im2col(xpad, k, stride, ho, wo)
    w2 = weight.data.reshape(cout, -1)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)

    def bw(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gpad = _kernels.col2im(w2.T @ g2, n, c, hp, wp, k, stride, ho, wo)
            gx = gpad[:, :, pad:pad + h, pad:pad + w] if pad else gpad
        return (gx, gw, gb)

    parents = (x, weight, bias if bias is not None else Tensor(0.0))
    return _unbatch(_make(np.ascontiguousarray(out), parents, bw, "conv2d"), squeeze)


def fully_connected(x, weight, bias=None):
    """``weight @ x + bias`` for ``x`` of shape (D_in,) or (N, D_in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"input last axis {x.shape[-1]} vs weight D_in {weight.shape[1:]}")
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data
    xd, wd = x.data, weight.data

    def bw(g):
        gx = g @ wd if x.requires_grad else None
        gw = (np.outer(g, xd) if g.ndim == 1 else g.T @ xd) if weight.requires_grad else None
        gb = (g if g.ndim == 1 else g.sum(axis=0)) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, weight, bias if bias is not None else Tensor(0.0))
    return _make(out, parents, bw, "fully_connected")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _make(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),), "softmax")


def sigmoid(x):
    return as_tensor(x).sigmoid()


def tanh(x):
    return as_tensor(x).tanh()


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return _make(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def clamp(x, lo, hi):
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


def broadcast_to(x, shape):
    """Explicit broadcast; the gradient is summed back over replicated axes."""
    x = as_tensor(x)
    shape = tuple(shape)
    src = x.shape
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {src} to {shape}") from exc
    lead = len(shape) - len(src)

    def bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, d in enumerate(src) if d == 1 and g.shape[i] != 1)
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _make(out, (x,), bw, "broadcast_to")


def broadcast_spatial(vec, height, width):
    """Replicate a (C,) or (N, C) vector over H, W -> (C, H, W) or (N, C, H, W)."""
    vec = as_tensor(vec)
    if vec.ndim not in (1, 2):
        raise DimensionError(f"broadcast_spatial expects (C,) or (N,C), got {vec.shape}")
    v4 = vec.reshape(vec.shape + (1, 1))
    return broadcast_to(v4, vec.shape + (height, width))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat shapes {[t.shape for t in tensors]} on axis {axis}") from exc
    cuts = np.cumsum(sizes)[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def split(x, sections, axis=1):
    """Split into ``sections`` equal chunks along ``axis`` (views with slice backward)."""
    x = as_tensor(x)
    size = x.shape[axis]
    if size % sections:
        raise DimensionError(f"axis {axis} of extent {size} not divisible into {sections}")
    step = size // sections
    out = []
    for i in range(sections):
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(i * step, (i + 1) * step)
        out.append(x[tuple(idx)])
    return out


def resize_nearest(x, factor):
    """Integer-factor nearest-neighbour upsampling."""
    x, squeeze = _batched(x)
    f = int(factor)
    if f == 1:
        return _unbatch(x, squeeze)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)
    bw = lambda g: (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)  # noqa: E731
    return _unbatch(_make(out, (x,), bw, "resize_nearest"), squeeze)


def bilinear_matrix(n_in, n_out):
    """Half-pixel bilinear interpolation weights, shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        t = src - lo
        m[i, lo] += 1.0 - t
        m[i, hi] += t
    return m


def resize_bilinear(x, size):
    """Bilinear resampling to ``size = (H_out, W_out)`` (half-pixel centres, edge clamp)."""
    x, squeeze = _batched(x)
    h, w = x.shape[2:]
    ho, wo = size
    if (ho, wo) == (h, w):
        return _unbatch(x, squeeze)
    ry, rx = bilinear_matrix(h, ho), bilinear_matrix(w, wo)
    out = ry @ x.data @ rx.T
    return _unbatch(_make(out, (x,), lambda g: (ry.T @ g @ rx,), "resize_bilinear"), squeeze)


def avg_pool(x, k):
    """Non-overlapping k x k average pooling; H and W must be multiples of k."""
    x, squeeze = _batched(x)
    k = int(k)
    if k == 1:
        return _unbatch(x, squeeze)
    n, c, h, w = x.shape
    if h % k or w % k:
        raise DimensionError(f"avg_pool: spatial {h}x{w} not divisible by {k}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))
    bw = lambda g: (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)  # noqa: E731
    return _unbatch(_make(out, (x,), bw, "avg_pool"), squeeze)


def l2_norm(x, axis=None):
    """Euclidean norm; the (sub)gradient at the origin is taken as zero."""
    x = as_tensor(x)
    nrm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    safe = np.where(nrm > 0, nrm, 1.0)
    out = nrm.reshape(()) if axis is None else np.squeeze(nrm, axis)
    return _make(out, (x,), lambda g: (np.reshape(g, nrm.shape) * x.data / safe * (nrm > 0),),
                 "l2_norm")


def normalize(x, axis=-1, eps=1e-12):
    """Scale vectors along ``axis`` to unit L2 norm."""
    x = as_tensor(x)
    nrm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(nrm, eps)
    u = x.data / denom

    def bw(g):
        return ((g - u * (g * u).sum(axis=axis, keepdims=True)) / denom,)

    return _make(u, (x,), bw, "normalize")
