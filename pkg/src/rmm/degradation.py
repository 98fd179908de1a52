"""Blind degradation synthesis: blur, bicubic downsampling, Gaussian noise, JPEG-style quantization.

Images are float arrays of shape (C, H, W) in [0, 1]. Stages run in the
order blur -> downsample -> noise -> compression. Downsampling is always on;
the other stages are switched by a per-image Bernoulli(0.5) mask.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .errors import ContractError

DEFAULT_RANGES = {
    "gaussian_sigma": (1.0, 5.0),
    "motion_length": (3, 11),
    "scale_r": (2, 12),
    "noise_sigma": (1.0, 15.0),
    "jpeg_quality": (40, 80),
}
STAGES = ("blur", "noise", "jpeg")

LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


# -- kernels -------------------------------------------------------------------
def gaussian_kernel(sigma):
    """Normalized isotropic Gaussian on a (2*ceil(3 sigma)+1)^2 grid."""
    if sigma <= 0:
        raise ContractError(f"sigma must be > 0, got {sigma}")
    half = int(math.ceil(3 * sigma))
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def motion_kernel(length, angle, oversample=64):
    """Line segment of ``length`` pixels through the centre at ``angle`` radians.

    Anti-aliased by box-filter supersampling: ``oversample`` points per pixel
    of length are deposited into the nearest cell.
    """
    if length < 1:
        raise ContractError(f"motion length must be >= 1, got {length}")
    half = int(length // 2)
    k = 2 * half + 1
    count = oversample * int(math.ceil(length))
    t = -length / 2.0 + (np.arange(count) + 0.5) * (length / count)
    x = t * math.cos(angle)
    y = -t * math.sin(angle)
    cols = np.clip(np.floor(x + 0.5).astype(int) + half, 0, k - 1)
    rows = np.clip(np.floor(y + 0.5).astype(int) + half, 0, k - 1)
    ker = np.zeros((k, k))
    np.add.at(ker, (rows, cols), 1.0)
    return ker / ker.sum()


def blur(image, kernel):
    img = np.asarray(image, dtype=np.float64)
    return np.stack([ndimage.correlate(ch, kernel, mode="reflect") for ch in img])


# -- bicubic ---------------------------------------------------------------------
def cubic(x, a=-0.5):
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    return np.where(x <= 1, (a + 2) * x3 - (a + 3) * x2 + 1,
                    np.where(x < 2, a * x3 - 5 * a * x2 + 8 * a * x - 4 * a, 0.0))


def bicubic_matrix(n_in, n_out, a=-0.5):
    """Resampling weights (n_out, n_in); the kernel is widened when shrinking (antialias).

    Out-of-range taps are clamped to the border sample and rows are
    normalized to sum to one.
    """
    if n_out < 1 or n_in < 1:
        raise ContractError(f"resize extents must be positive, got {n_in}->{n_out}")
    scale = n_out / n_in
    stretch = min(scale, 1.0)
    support = 2.0 / stretch
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        centre = (i + 0.5) / scale - 0.5
        lo = int(math.floor(centre - support)) + 1
        taps = np.arange(lo, lo + int(math.ceil(2 * support)) + 1)
        w = cubic((taps - centre) * stretch, a)
        keep = w != 0
        np.add.at(m[i], np.clip(taps[keep], 0, n_in - 1), w[keep])
        m[i] /= m[i].sum()
    return m


def bicubic_resize(image, target):
    """Separable Catmull-Rom resize of (C, H, W) to ``target`` = (H', W') or an integer factor.

    A float/int factor > 0 multiplies both extents (rounded).
    """
    img = np.asarray(getattr(image, "data", image), dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    h, w = img.shape[-2:]
    if np.isscalar(target):
        if target <= 0:
            raise ContractError("resize factor must be positive")
        target = (max(1, int(round(h * target))), max(1, int(round(w * target))))
    ho, wo = target
    if ho < 1 or wo < 1:
        raise ContractError(f"target size must be positive, got {target}")
    out = bicubic_matrix(h, ho) @ img @ bicubic_matrix(w, wo).T
    return out[0] if squeeze else out


# -- noise -------------------------------------------------------------------------
def add_gaussian_noise(image, sigma_255, rng):
    """Additive N(0, (sigma/255)^2) noise, clamped to [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if sigma_255 == 0:
        return img.copy()
    return np.clip(img + rng.normal(0.0, sigma_255 / 255.0, size=img.shape), 0.0, 1.0)


# -- JPEG-like -------------------------------------------------------------------------
def quality_table(quality, base=LUMA_TABLE):
    if not 1 <= quality <= 100:
        raise ContractError(f"JPEG quality must be in [1, 100], got {quality}")
    s = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((base * s + 50.0) / 100.0), 1, 255)


def rgb_to_ycbcr(rgb):
    r, g, b = rgb
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr])


def ycbcr_to_rgb(ycc):
    y, cb, cr = ycc[0], ycc[1] - 128.0, ycc[2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b])


def block_dct(plane):
    """Orthonormal 8x8 DCT-II of every block of an (H, W) plane (H, W multiples of 8)."""
    h, w = plane.shape
    blocks = plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)
    return sfft.dctn(blocks, type=2, norm="ortho", axes=(2, 3))


def block_idct(coefs):
    hb, wb = coefs.shape[:2]
    blocks = sfft.idctn(coefs, type=2, norm="ortho", axes=(2, 3))
    return blocks.transpose(0, 2, 1, 3).reshape(hb * 8, wb * 8)


def jpeg_like(image, quality):
    """Baseline-JPEG-equivalent lossy round trip (no entropy coding, no chroma subsampling).

    Every YCbCr plane is quantized with the luminance table scaled for
    ``quality``. The output is rounded to 8-bit levels.
    """
    table = quality_table(quality)
    img = np.asarray(image, dtype=np.float64)
    c, h, w = img.shape
    ph, pw = (-h) % 8, (-w) % 8
    px = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="edge") * 255.0
    planes = rgb_to_ycbcr(px) if c == 3 else px
    out = np.empty_like(planes)
    for i, plane in enumerate(planes):
        coefs = block_dct(plane - 128.0)
        coefs = np.round(coefs / table) * table
        out[i] = block_idct(coefs) + 128.0
    rgb = ycbcr_to_rgb(out) if c == 3 else out
    rgb = np.clip(np.round(rgb), 0, 255) / 255.0
    return rgb[:, :h, :w]


# -- pipeline ----------------------------------------------------------------------
@dataclass
class DegradationConfig:
    blur_kind: str = "none"  # gaussian | motion | none
    gaussian_sigma: float = 1.0
    motion_length: int = 3
    motion_angle: float = 0.0
    scale_r: int = 4
    noise_sigma: float = 1.0
    jpeg_quality: int = 80
    stage_mask: dict = field(default_factory=lambda: {s: False for s in STAGES})
    seed: int = 0

    @classmethod
    def sample(cls, rng, ranges=None, seed=None):
        """Draw a configuration; every optional stage is on with probability 0.5."""
        r = dict(DEFAULT_RANGES)
        r.update(ranges or {})
        mask = {s: bool(rng.random() < 0.5) for s in STAGES}
        kind = ("gaussian" if rng.random() < 0.5 else "motion") if mask["blur"] else "none"
        cfg = cls(
            blur_kind=kind,
            gaussian_sigma=float(rng.uniform(*r["gaussian_sigma"])),
            motion_length=int(rng.integers(r["motion_length"][0], r["motion_length"][1] + 1)),
            motion_angle=float(rng.uniform(0.0, math.pi)),
            scale_r=int(rng.integers(r["scale_r"][0], r["scale_r"][1] + 1)),
            noise_sigma=float(rng.uniform(*r["noise_sigma"])),
            jpeg_quality=int(rng.integers(r["jpeg_quality"][0], r["jpeg_quality"][1] + 1)),
            stage_mask=mask,
            seed=int(rng.integers(2 ** 31)) if seed is None else int(seed),
        )
        return cfg

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def substream(master_seed, index):
    """Independent generator for item ``index`` of a batch seeded by ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


def degrade(image, config: DegradationConfig):
    """Apply the configured stages; returns (low-quality image, config).

    The output extent is ``(H // r, W // r)``.
    """
    img = np.asarray(image, dtype=np.float64)
    mask = config.stage_mask
    if mask.get("blur") and config.blur_kind != "none":
        if config.blur_kind == "gaussian":
            ker = gaussian_kernel(config.gaussian_sigma)
        elif config.blur_kind == "motion":
            ker = motion_kernel(config.motion_length, config.motion_angle)
        else:
            raise ContractError(f"unknown blur kind {config.blur_kind!r}")
        img = blur(img, ker)
    r = int(config.scale_r)
    if r < 1:
        raise ContractError(f"scale must be >= 1, got {r}")
    h, w = img.shape[-2:]
    if r > 1:
        img = bicubic_resize(img, (h // r, w // r))
    if mask.get("noise"):
        img = add_gaussian_noise(img, config.noise_sigma, np.random.default_rng(config.seed))
    if mask.get("jpeg"):
        img = jpeg_like(np.clip(img, 0.0, 1.0), config.jpeg_quality)
    return np.clip(img, 0.0, 1.0), config
