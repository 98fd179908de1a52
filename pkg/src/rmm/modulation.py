"""Attentional denormalization block (instance + layer branches, sigmoid-gated fusion).

Each branch normalizes the feature map, applies three affine modulations
(spatial code, noise embedding, wavelet code) and mixes them with a
per-pixel softmax over the three sources. A sigmoid gate computed from the
raw features blends the instance and layer results.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import (
    Conv2d,
    Linear,
    Module,
    Tensor,
    as_tensor,
    broadcast_spatial,
    broadcast_to,
    resize_bilinear,
    softmax,
    split,
)
from .tensor.core import _make

DEFAULT_EPS = 1e-5
SOURCES = ("spatial", "noise", "wavelet")


def _normalize(h, axes, eps, op):
    h = as_tensor(h)
    x = h.data
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    sigma = np.sqrt(var + eps)
    out = xc / sigma

    def bw(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * out).mean(axis=axes, keepdims=True)
        return ((g - gm - out * gxm) / sigma,)

    return _make(out, (h,), bw, op), mu, sigma


def _spatial_axes(h):
    if h.ndim not in (3, 4):
        raise DimensionError(f"expected (C,H,W) or (N,C,H,W), got {h.shape}")
    if h.shape[-1] * h.shape[-2] < 2:
        raise ContractError("normalization needs H*W >= 2")
    return h.ndim


def instance_normalize(h, eps=DEFAULT_EPS):
    """Per-channel standardization over H, W. Returns (h_I, mu, sigma)."""
    nd = _spatial_axes(as_tensor(h))
    return _normalize(h, (nd - 2, nd - 1), eps, "instance_norm")


def layer_normalize(h, eps=DEFAULT_EPS):
    """Standardization over C, H, W jointly. Returns (h_L, mu, sigma)."""
    nd = _spatial_axes(as_tensor(h))
    return _normalize(h, (nd - 3, nd - 2, nd - 1), eps, "layer_norm")


def _expand_like(t, ref_shape):
    """Turn a (C,)/(N,C) vector into a map, or pass a full map through."""
    t = as_tensor(t)
    if t.shape == ref_shape:
        return t
    if t.ndim in (1, 2) and t.shape[-1] == ref_shape[-3]:
        out = broadcast_spatial(t, ref_shape[-2], ref_shape[-1])
        return out if out.shape == ref_shape else broadcast_to(out, ref_shape)
    if t.ndim == len(ref_shape) and t.shape[-3] == 1:
        return broadcast_to(t, ref_shape)
    raise DimensionError(f"cannot broadcast {t.shape} against feature map {ref_shape}")


def denormalize_branch(h_norm, gamma, beta):
    """gamma * h_norm + beta with vector parameters replicated over H, W."""
    h_norm = as_tensor(h_norm)
    return _expand_like(gamma, h_norm.shape) * h_norm + _expand_like(beta, h_norm.shape)


def attention_maps(h_norm, attn_head):
    """Softmax over the three source logits at every pixel -> (M_S, M_N, M_W)."""
    logits = attn_head(h_norm)
    if logits.shape[-3] != 3:
        raise DimensionError(f"attention head must emit 3 channels, got {logits.shape[-3]}")
    probs = softmax(logits, axis=-3)
    sl = [slice(None)] * probs.ndim
    maps = []
    for i in range(3):
        sl[-3] = slice(i, i + 1)
        maps.append(probs[tuple(sl)])
    return tuple(maps)


@dataclass
class BlockInput:
    h: Tensor  # (N, C, H, W)
    z_s: Tensor  # (N, C_S, H_S, W_S)
    z_n: Tensor  # (N, D_N)
    z_w: Tensor  # (N, D_W)


class Rm3Params(Module):
    """Learnable heads of one block.

    Each affine head emits four C-channel groups: (gamma_I, beta_I,
    gamma_L, beta_L). Gamma biases start at 1 so an untrained block passes
    normalized features through.
    """

    def __init__(self, channels, spatial_channels, noise_dim, wavelet_dim, rng,
                 gate_channels=1, kernel=3):
        c = channels
        self.channels = c
        bias = np.zeros(4 * c)
        bias[0:c] = 1.0
        bias[2 * c:3 * c] = 1.0
        self.spatial_affine = Conv2d(spatial_channels, 4 * c, kernel, rng)
        self.noise_affine = Linear(noise_dim, 4 * c, rng)
        self.wavelet_affine = Linear(wavelet_dim, 4 * c, rng)
        for head in (self.spatial_affine, self.noise_affine, self.wavelet_affine):
            head.bias.data = bias.copy()
        self.attn_I = Conv2d(c, 3, kernel, rng)
        self.attn_L = Conv2d(c, 3, kernel, rng)
        if gate_channels not in (1, c):
            raise ContractError("gate_channels must be 1 or the block width")
        self.attn_O = Conv2d(c, gate_channels, kernel, rng)


def rm3_forward(inp: BlockInput, params: Rm3Params, eps=DEFAULT_EPS, record=None):
    """Run one block. If ``record`` is a dict, attention maps are stored in it."""
    h = as_tensor(inp.h)
    single = h.ndim == 3
    if single:
        h = h.reshape((1,) + h.shape)
    n, c, hh, ww = h.shape
    if c != params.channels:
        raise DimensionError(f"feature width {c} != block width {params.channels}")
    z_s = as_tensor(inp.z_s)
    if z_s.ndim == 3:
        z_s = z_s.reshape((1,) + z_s.shape)
    z_n = as_tensor(inp.z_n).reshape(n, -1)
    z_w = as_tensor(inp.z_w).reshape(n, -1)

    h_i, _, _ = instance_normalize(h, eps)
    h_l, _, _ = layer_normalize(h, eps)

    spatial = split(params.spatial_affine(resize_bilinear(z_s, (hh, ww))), 4, axis=1)
    noise = split(params.noise_affine(z_n), 4, axis=1)
    wavelet = split(params.wavelet_affine(z_w), 4, axis=1)

    m_i = attention_maps(h_i, params.attn_I)
    m_l = attention_maps(h_l, params.attn_L)
    gate = params.attn_O(h).sigmoid()

    def fuse(h_norm, maps, offset):
        total = None
        for head, m in zip((spatial, noise, wavelet), maps):
            branch = denormalize_branch(h_norm, head[offset], head[offset + 1])
            term = branch * broadcast_to(m, branch.shape)
            total = term if total is None else total + term
        return total

    big_i = fuse(h_i, m_i, 0)
    big_l = fuse(h_l, m_l, 2)
    g = gate if gate.shape == big_i.shape else broadcast_to(gate, big_i.shape)
    out = big_i * g + big_l * (1.0 - g)
    if record is not None:
        for name, m in zip(("S_I", "N_I", "W_I"), m_i):
            record[name] = m.data
        for name, m in zip(("S_L", "N_L", "W_L"), m_l):
            record[name] = m.data
        record["O"] = gate.data
    return out.reshape(out.shape[1:]) if single else out
