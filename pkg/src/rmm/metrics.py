"""PSNR, SSIM and MS-SSIM for (C, H, W) or (H, W) float images."""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import ndimage

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _as3(x):
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    return x[None] if x.ndim == 2 else x


def psnr(a, b, peak=1.0):
    """10 log10(peak^2 / MSE); ``inf`` when the inputs are identical."""
    a, b = _as3(a), _as3(b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size=WINDOW, sigma=SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-ax ** 2 / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x, g):
    """Separable 'valid' correlation of every channel of (C, H, W) with 1-D window ``g``."""
    k = len(g)
    y = ndimage.correlate1d(x, g, axis=-1, mode="constant")
    y = ndimage.correlate1d(y, g, axis=-2, mode="constant")
    h = k // 2
    return y[..., h:x.shape[-2] - h, h:x.shape[-1] - h]


def _ssim_maps(a, b, peak):
    c1 = (K1 * peak) ** 2
    c2 = (K2 * peak) ** 2
    size = min(WINDOW, a.shape[-1], a.shape[-2])
    g = gaussian_window(size if size % 2 else size - 1, SIGMA)
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    cs = (2 * sab + c2) / (saa + sbb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    return lum * cs, cs


def ssim(a, b, peak=1.0):
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    a, b = _as3(a), _as3(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    full, _ = _ssim_maps(a, b, peak)
    return float(full.mean())


def ms_ssim_scales(height, width, max_scales=len(MS_SSIM_WEIGHTS)):
    """Number of dyadic scales whose smallest image still fits one window."""
    m = 1
    while m < max_scales and min(height, width) // 2 ** m >= WINDOW:
        m += 1
    return m


def _downsample2(x):
    h, w = x.shape[-2] // 2 * 2, x.shape[-1] // 2 * 2
    x = x[..., :h, :w]
    return 0.25 * (x[..., 0::2, 0::2] + x[..., 1::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 1::2])


def ms_ssim(a, b, peak=1.0):
    """Multi-scale SSIM: prod_j cs_j^w_j (j < M) * ssim_M^w_M.

    Falls back to fewer scales (exponents renormalized to sum 1) for small
    images; the full five-scale form uses the standard exponents as-is.
    Negative per-scale terms are clamped to 0 before exponentiation.
    """
    a, b = _as3(a), _as3(b)
    m = ms_ssim_scales(*a.shape[-2:])
    if m < len(MS_SSIM_WEIGHTS):
        warnings.warn(f"image {a.shape[-2]}x{a.shape[-1]} too small for 5 scales; using {m}",
                      stacklevel=2)
    weights = np.array(MS_SSIM_WEIGHTS[:m])
    if m < len(MS_SSIM_WEIGHTS):
        weights = weights / weights.sum()
    value = 1.0
    for j in range(m):
        full, cs = _ssim_maps(a, b, peak)
        term = full.mean() if j == m - 1 else cs.mean()
        value *= max(float(term), 0.0) ** weights[j]
        a, b = _downsample2(a), _downsample2(b)
    return float(value)


def evaluate_pair(restored, reference, peak=1.0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {"psnr": psnr(restored, reference, peak), "ssim": ssim(restored, reference, peak),
                "ms_ssim": ms_ssim(restored, reference, peak)}
