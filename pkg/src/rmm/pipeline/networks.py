"""Generator (U-Net encoder + mapping network + modulated decoder) and query encoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..degradation import bicubic_resize
from ..errors import ConfigError, DimensionError
from ..modulation import BlockInput, Rm3Params, rm3_forward
from ..tensor import (
    Conv2d,
    Linear,
    Module,
    Tensor,
    as_tensor,
    concat,
    leaky_relu,
    normalize,
    resize_nearest,
)
from ..wavelet import code_length

MIN_RESOLUTION = 4
ARTANH_CLIP = 0.99


@dataclass
class GeneratorConfig:
    resolution: int = 64
    rm3_block_count: int = 4
    channels: int = 3
    noise_dim: int = 512
    wavelet_levels: int = 2
    widths: tuple = (8, 16, 32, 32)
    mapping_width: int = 512
    mapping_layers: int = 4
    noise_embed_dim: int = 64
    gate_channels: int = 1

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.validate()

    def validate(self):
        if self.rm3_block_count < 1:
            raise ConfigError(f"rm3_block_count must be >= 1, got {self.rm3_block_count}")
        if self.resolution % (2 ** self.wavelet_levels):
            raise ConfigError(f"resolution {self.resolution} is not divisible by "
                              f"2^{self.wavelet_levels}")
        if self.resolution < MIN_RESOLUTION:
            raise ConfigError(f"resolution must be >= {MIN_RESOLUTION}")
        if not self.widths or min(self.widths) < 1:
            raise ConfigError("widths must be a non-empty tuple of positive ints")
        for name in ("channels", "noise_dim", "mapping_width", "mapping_layers", "noise_embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def wavelet_dim(self):
        return code_length(self.channels, self.wavelet_levels)

    def width(self, scale):
        return self.widths[min(scale, len(self.widths) - 1)]

    def scale_resolutions(self):
        """Feature resolution at each encoder scale; halves until MIN_RESOLUTION."""
        res = [self.resolution]
        for _ in range(self.rm3_block_count - 1):
            r = res[-1]
            res.append(r // 2 if r > MIN_RESOLUTION and r % 2 == 0 else r)
        return res

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Encoder(Module):
    """Conv encoder collecting one feature map per scale, plus a skip-connected
    decoder producing the residual that refines the upsampled input."""

    def __init__(self, cfg: GeneratorConfig, rng):
        self.resolutions = cfg.scale_resolutions()
        b = cfg.rm3_block_count
        self.stem = Conv2d(cfg.channels, cfg.width(0), 3, rng)
        self.down = []
        for i in range(1, b):
            stride = 2 if self.resolutions[i] < self.resolutions[i - 1] else 1
            self.down.append(Conv2d(cfg.width(i - 1), cfg.width(i), 3, rng, stride=stride))
        self.up = [Conv2d(cfg.width(i + 1) + cfg.width(i), cfg.width(i), 3, rng)
                   for i in range(b - 1)]
        self.to_rgb = Conv2d(cfg.width(0), cfg.channels, 3, rng)

    def __call__(self, x):
        feats = [leaky_relu(self.stem(x))]
        for conv in self.down:
            feats.append(leaky_relu(conv(feats[-1])))
        u = feats[-1]
        for i in range(len(feats) - 2, -1, -1):
            f = self.resolutions[i] // self.resolutions[i + 1]
            u = leaky_relu(self.up[i](concat([resize_nearest(u, f), feats[i]], axis=1)))
        x_mr = x + self.to_rgb(u)
        return x_mr, feats


class MappingNetwork(Module):
    """Fully connected trunk with leaky relu, one linear head per block."""

    def __init__(self, cfg: GeneratorConfig, rng):
        dims = [cfg.noise_dim] + [cfg.mapping_width] * cfg.mapping_layers
        self.trunk = [Linear(dims[i], dims[i + 1], rng) for i in range(cfg.mapping_layers)]
        self.heads = [Linear(cfg.mapping_width, cfg.noise_embed_dim, rng, bias_init=0.1)
                      for _ in range(cfg.rm3_block_count)]

    def __call__(self, noise):
        h = as_tensor(noise)
        for layer in self.trunk:
            h = leaky_relu(layer(h))
        return [head(h) for head in self.heads]


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig, rng):
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.mapping = MappingNetwork(cfg, rng)
        res = cfg.scale_resolutions()
        b = cfg.rm3_block_count
        self.blocks = []
        self.post = []
        for j in range(b):
            i = b - 1 - j
            c = cfg.width(i)
            self.blocks.append(Rm3Params(c, c, cfg.noise_embed_dim, cfg.wavelet_dim, rng,
                                         gate_channels=cfg.gate_channels))
            self.post.append(Conv2d(c, cfg.width(max(i - 1, 0)), 3, rng))
        self.project = Conv2d(cfg.width(0), cfg.channels, 3, rng)
        self._res = res

    def __call__(self, lq, noise, z_w, record=None, base=None):
        return generator_forward(self, lq, noise, z_w, record, base)


def upsample_input(lq, resolution):
    """Bicubic-upsample a (N, C, h, w) batch (or list of (C, h, w)) to ``resolution``."""
    items = list(lq) if isinstance(lq, (list, tuple)) else list(np.asarray(getattr(lq, "data", lq)))
    out = [img if img.shape[-1] == resolution and img.shape[-2] == resolution
           else bicubic_resize(img, (resolution, resolution)) for img in items]
    return np.stack(out)


def _batch(x, dims, name):
    t = as_tensor(x)
    if t.ndim == dims - 1:
        t = t.reshape((1,) + t.shape)
    if t.ndim != dims:
        raise DimensionError(f"{name}: expected {dims}-d input, got shape {t.shape}")
    return t


def encoder_forward(gen, lq_upsampled):
    """(x_mr, z_S list) for a batch already at the working resolution."""
    x = _batch(lq_upsampled, 4, "encoder input")
    r = gen.cfg.resolution
    if x.shape[-2:] != (r, r) or x.shape[1] != gen.cfg.channels:
        raise DimensionError(f"encoder expects (N, {gen.cfg.channels}, {r}, {r}), got {x.shape}")
    return gen.encoder(x)


def _prepare_inputs(cfg: GeneratorConfig, lq, noise, z_w):
    lq_t = as_tensor(lq)
    if lq_t.ndim == 3:
        lq_t = lq_t.reshape((1,) + lq_t.shape)
    if lq_t.shape[-1] != cfg.resolution or lq_t.shape[-2] != cfg.resolution:
        lq_t = Tensor(upsample_input(lq_t.data, cfg.resolution))
    n = lq_t.shape[0]
    noise = _batch(noise, 2, "noise")
    z_w = _batch(z_w, 2, "wavelet code")
    if noise.shape != (n, cfg.noise_dim):
        raise DimensionError(f"noise must be ({n}, {cfg.noise_dim}), got {noise.shape}")
    if z_w.shape != (n, cfg.wavelet_dim):
        raise DimensionError(f"wavelet code must be ({n}, {cfg.wavelet_dim}), got {z_w.shape}")
    return lq_t, noise, z_w


def generator_forward(gen: Generator, lq, noise, z_w, record=None, base=None):
    """Restore a batch. Returns ``(restored, x_mr)``, both (N, C, R, R) in [-1, 1].

    ``lq`` is bicubic-upsampled to the working resolution if needed. The
    final projection is added in the inverse-tanh domain to a detached copy
    of ``x_mr``. If ``record`` is a list, one dict of attention maps per
    block is appended. ``base`` overrides the detached copy of ``x_mr``
    (finite-difference checks hold it fixed, as backprop does).
    """
    cfg = gen.cfg
    lq_t, noise, z_w = _prepare_inputs(cfg, lq, noise, z_w)
    x_mr, z_s = encoder_forward(gen, lq_t)
    z_n = gen.mapping(noise)
    res = gen._res
    b = cfg.rm3_block_count
    h = z_s[-1]
    for j, (block, post) in enumerate(zip(gen.blocks, gen.post)):
        i = b - 1 - j
        maps = {} if record is not None else None
        h = leaky_relu(rm3_forward(BlockInput(h, z_s[i], z_n[j], z_w), block, record=maps))
        if record is not None:
            record.append(maps)
        if i > 0:
            h = resize_nearest(h, res[i - 1] // res[i])
        h = leaky_relu(post(h))
    base = np.clip(x_mr.data if base is None else base, -ARTANH_CLIP, ARTANH_CLIP)
    restored = (gen.project(h) + Tensor(np.arctanh(base))).tanh()
    return restored, x_mr


class EncoderOnlyGenerator(Module):
    """No modulated decoder: the refined input ``x_mr`` is the output.

    Used as the zero-block row of the block-count sweep; the encoder keeps
    ``cfg.rm3_block_count`` scales.
    """

    def __init__(self, cfg: GeneratorConfig, rng):
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)

    def __call__(self, lq, noise, z_w, record=None):
        lq_t, _, _ = _prepare_inputs(self.cfg, lq, noise, z_w)
        x_mr, _ = encoder_forward(self, lq_t)
        return x_mr, x_mr


class QueryEncoder(Module):
    """Strided convs -> global average pool -> linear -> unit norm."""

    def __init__(self, rng, key_dim=64, widths=(8, 16, 32), input_size=32, channels=3):
        self.input_size = int(input_size)
        chans = (channels,) + tuple(widths)
        self.convs = [Conv2d(chans[i], chans[i + 1], 3, rng, stride=2) for i in range(len(widths))]
        self.fc = Linear(chans[-1], key_dim, rng)

    def __call__(self, lq):
        return query_encode(self, lq)


def query_encode(qe: QueryEncoder, lq):
    """Unit-norm keys, shape (N, key_dim); a single (C, h, w) image gives (key_dim,).

    Inputs are images in [0, 1] of any size (a list may mix sizes); each is
    bicubic-resized to ``qe.input_size`` first.
    """
    if isinstance(lq, (list, tuple)):
        single, batch = False, list(lq)
    else:
        arr = np.asarray(getattr(lq, "data", lq), dtype=np.float64)
        single = arr.ndim == 3
        batch = arr[None] if single else arr
    x = Tensor(upsample_input(batch, qe.input_size))
    for conv in qe.convs:
        x = leaky_relu(conv(x))
    pooled = x.mean(axis=(2, 3))
    q = normalize(qe.fc(pooled), axis=1)
    return q.reshape(q.shape[1]) if single else q
