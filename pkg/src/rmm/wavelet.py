"""Full Haar wavelet packet decomposition and the pooled wavelet style code.

Every level splits *all* current subbands into four children, so an
``n``-level tree has ``4**n`` equally sized bands. Child order per split is
(row-low, col-low), (row-low, col-high), (row-high, col-low),
(row-high, col-high), where "row" filtering runs along each row (i.e.
horizontally). Band ``k`` of level ``l+1`` is child ``k % 4`` of band
``k // 4`` of level ``l``; band 0 is the all-lowpass approximation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractError


@dataclass
class WaveletPacketTree:
    levels: int
    subbands: np.ndarray  # (channels, 4**levels, H / 2**levels, W / 2**levels)
    original_shape: tuple  # (H, W) before any reflect padding

    @property
    def channel_count(self):
        return self.subbands.shape[0]

    @property
    def band_count(self):
        return self.subbands.shape[1]

    @property
    def padded_shape(self):
        f = 2 ** self.levels
        return (self.subbands.shape[2] * f, self.subbands.shape[3] * f)

    def energy(self):
        return float(np.sum(self.subbands ** 2))

    def band(self, index, channel=None):
        b = self.subbands[:, index]
        return b if channel is None else b[channel]


def _as_chw(image):
    arr = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ContractError(f"expected a (C,H,W) image, got shape {arr.shape}")
    return arr


def reflect_pad(image, levels):
    """Reflect-pad H and W up to the next multiple of ``2**levels``.

    Returns the padded array and the original (H, W).
    """
    arr = _as_chw(image)
    m = 2 ** levels
    h, w = arr.shape[1:]
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        arr = np.pad(arr, ((0, 0), (0, ph), (0, pw)), mode="reflect" if min(h, w) > 1 else "edge")
    return arr, (h, w)


def wpd_forward(image, n, original_shape=None):
    """Decompose a (C, H, W) image into ``4**n`` Haar packet subbands per channel."""
    if n < 1:
        raise ContractError(f"levels must be >= 1, got {n}")
    arr = _as_chw(image)
    c, h, w = arr.shape
    m = 2 ** n
    if h % m or w % m:
        raise ContractError(f"image {h}x{w} must be a multiple of {m} (2**{n}) on both axes; "
                            "reflect_pad() first")
    bands = arr[:, None]
    for _ in range(n):
        nb, bh, bw = bands.shape[1:]
        split = _kernels.haar_analysis(bands.reshape(c * nb, bh, bw))
        bands = split.reshape(c, nb * 4, bh // 2, bw // 2)
    return WaveletPacketTree(levels=n, subbands=bands, original_shape=original_shape or (h, w))


def wpd_inverse(tree: WaveletPacketTree):
    """Exact inverse of :func:`wpd_forward`, cropped to ``tree.original_shape``."""
    bands = np.asarray(tree.subbands, dtype=np.float64)
    if bands.ndim != 4 or bands.shape[1] != 4 ** tree.levels:
        raise ContractError(f"malformed tree: expected {4 ** tree.levels} subbands, "
                            f"got shape {bands.shape}")
    c = bands.shape[0]
    for _ in range(tree.levels):
        nb, bh, bw = bands.shape[1:]
        merged = _kernels.haar_synthesis(bands.reshape(c * nb // 4, 4, bh, bw))
        bands = merged.reshape(c, nb // 4, bh * 2, bw * 2)
    img = bands[:, 0]
    h, w = tree.original_shape
    return img[:, :h, :w]


def wavelet_style_code(tree: WaveletPacketTree, pooling="mean"):
    """Spatially pooled detail subbands, channel-major, band 0 excluded.

    ``pooling="mean"`` is the signed average; ``"abs"`` averages magnitudes,
    which keeps detail energy that signed means cancel out.
    """
    if tree.band_count < 2:
        raise ContractError("tree needs at least 2 subbands")
    detail = tree.subbands[:, 1:]
    if pooling == "mean":
        code = detail.mean(axis=(2, 3))
    elif pooling == "abs":
        code = np.abs(detail).mean(axis=(2, 3))
    else:
        raise ContractError(f"unknown pooling {pooling!r}; use 'mean' or 'abs'")
    return code.reshape(-1)


def code_length(channels, levels):
    return channels * (4 ** levels - 1)


def image_code(image, levels, pooling="mean"):
    """Shortcut: pad, decompose and pool one image."""
    padded, orig = reflect_pad(image, levels)
    return wavelet_style_code(wpd_forward(padded, levels, orig), pooling)


def subband_grid(tree: WaveletPacketTree):
    """Tile all subbands into a (C, H, W) mosaic for visual inspection.

    Band ``k`` goes to the tile at the Morton (Z-order) position of ``k``,
    so each split's four children land in a 2x2 block. Each tile is scaled
    to [0, 1] independently.
    """
    c, nb, bh, bw = tree.subbands.shape
    side = 2 ** tree.levels
    out = np.zeros((c, side * bh, side * bw))
    for k in range(nb):
        row = col = 0
        for lvl in range(tree.levels):
            child = (k >> (2 * (tree.levels - 1 - lvl))) & 3
            # children 1, 3 are column-high (lower tile); 2, 3 are row-high (right tile)
            row = row * 2 + (child & 1)
            col = col * 2 + (child >> 1)
        tile = tree.subbands[:, k]
        lo, hi = tile.min(), tile.max()
        tile = (tile - lo) / (hi - lo) if hi > lo else np.zeros_like(tile)
        out[:, row * bh:(row + 1) * bh, col * bw:(col + 1) * bw] = tile
    return out
