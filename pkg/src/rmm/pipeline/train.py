"""Training loop: discriminator step, generator step, memory step, logging."""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..degradation import DEFAULT_RANGES, DegradationConfig, degrade, substream
from ..errors import ConfigError, TrainingDiverged
from ..memory import MemoryBank, memory_update, wmm_loss
from ..objectives import (
    FeaturePyramid,
    LossWeights,
    MultiScaleDiscriminator,
    adversarial_losses,
    component_contextual_loss,
    huber,
    perceptual_loss,
    total_loss,
)
from ..tensor import Tensor, backward, no_grad, write_tensor
from ..wavelet import image_code
from .checkpoint import save_checkpoint
from .dataset import synth_dataset
from .networks import Generator, GeneratorConfig, QueryEncoder, upsample_input
from .optim import Adam

# independent streams drawn from the run seed
STREAM_GENERATOR, STREAM_DISC, STREAM_QUERY, STREAM_ORDER, STREAM_DEGRADE, STREAM_NOISE = range(6)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 8
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    dataset_size: int = 64
    scale_r: int = 0  # 0: sample r per image from degrade_ranges
    degrade_ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))
    memory_capacity: int = 982
    eta: float = 0.7
    margin: float = 0.1
    kl_temperature: float = 1.0
    key_dim: int = 64
    disc_width: int = 8
    log_every: int = 1
    checkpoint_every: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**{k: tuple(v) if isinstance(v, list) else v
                                          for k, v in self.weights.items()})
        for name in ("steps", "batch", "dataset_size", "memory_capacity", "key_dim", "disc_width",
                     "log_every"):
            if getattr(self, name) < (0 if name == "steps" else 1):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr", "kl_temperature"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.margin < 0 or self.eta < 0 or self.scale_r < 0 or self.checkpoint_every < 0:
            raise ConfigError("margin, eta, scale_r and checkpoint_every must be >= 0")
        if self.batch > self.dataset_size:
            raise ConfigError(f"batch {self.batch} exceeds dataset size {self.dataset_size}")

    def to_dict(self):
        d = asdict(self)
        d["degrade_ranges"] = {k: list(v) for k, v in self.degrade_ranges.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "degrade_ranges" in d:
            d["degrade_ranges"] = {k: tuple(v) for k, v in d["degrade_ranges"].items()}
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class Batch:
    indices: np.ndarray
    x_hr: np.ndarray  # (N, C, R, R) in [-1, 1]
    lq: list  # per-image (C, h, w) in [0, 1]
    lq_up: np.ndarray  # (N, C, R, R) in [-1, 1]
    z_w: np.ndarray
    noise: np.ndarray
    boxes: list
    degradations: list


def _stream(seed, kind, index=0):
    return np.random.default_rng(np.random.SeedSequence([int(seed), kind, int(index)]))


def to_signed(x):
    return 2.0 * np.asarray(x) - 1.0


def to_unit(x):
    return (np.asarray(getattr(x, "data", x)) + 1.0) / 2.0


def degradation_for(seed, index, ranges=None, scale_r=0):
    """The degradation drawn for draw ``index`` of a run (fixed r when ``scale_r`` > 0)."""
    cfg = DegradationConfig.sample(substream(seed, index), ranges)
    if scale_r:
        cfg.scale_r = int(scale_r)
    return cfg


class Trainer:
    """Owns networks, optimizers, memory bank and the toy dataset for one run."""

    def __init__(self, gen_cfg: GeneratorConfig = None, cfg: TrainConfig = None, dataset=None,
                 out_dir=None, generator_cls=Generator):
        self.gen_cfg = gen_cfg or GeneratorConfig()
        self.cfg = cfg or TrainConfig()
        c = self.cfg
        self.generator = generator_cls(self.gen_cfg, _stream(c.seed, STREAM_GENERATOR))
        self.discriminator = MultiScaleDiscriminator(_stream(c.seed, STREAM_DISC),
                                                     c.weights.adv_scales, c.disc_width)
        self.query = QueryEncoder(_stream(c.seed, STREAM_QUERY), key_dim=c.key_dim,
                                  channels=self.gen_cfg.channels)
        self.feature_net = FeaturePyramid(seed=0, in_ch=self.gen_cfg.channels)
        betas = (c.beta1, c.beta2)
        self.opt_g = Adam(self.generator.parameters(), c.lr, betas)
        self.opt_d = Adam(self.discriminator.parameters(), c.lr, betas)
        self.opt_q = Adam(self.query.parameters(), c.lr, betas)
        self.bank = MemoryBank(c.memory_capacity, c.key_dim, self.gen_cfg.wavelet_dim)
        self.dataset = dataset or synth_dataset(c.dataset_size, self.gen_cfg.resolution, c.seed)
        if len(self.dataset) < c.batch:
            raise ConfigError("dataset smaller than batch")
        side = self.gen_cfg.resolution
        if any(img.shape[-2:] != (side, side) for img in self.dataset.images):
            raise ConfigError(f"dataset images must be {side}x{side} to match the generator")
        self.hr = to_signed(self.dataset.stack())
        self.codes = np.stack([image_code(x, self.gen_cfg.wavelet_levels) for x in self.hr])
        self.out_dir = out_dir
        self.step_index = 0
        self.history = []

    # -- data ------------------------------------------------------------------------
    def batch_indices(self, step):
        return _stream(self.cfg.seed, STREAM_ORDER, step).choice(
            len(self.dataset), self.cfg.batch, replace=False)

    def prepare_batch(self, step):
        c = self.cfg
        idx = self.batch_indices(step)
        lq, configs = [], []
        for j, i in enumerate(idx):
            dcfg = degradation_for(_seed_of(c.seed, STREAM_DEGRADE), step * c.batch + j,
                                   c.degrade_ranges, c.scale_r)
            img, _ = degrade(self.dataset.images[i], dcfg)
            lq.append(img)
            configs.append(dcfg)
        lq_up = to_signed(upsample_input(lq, self.gen_cfg.resolution))
        noise = _stream(c.seed, STREAM_NOISE, step).normal(size=(len(idx), self.gen_cfg.noise_dim))
        return Batch(idx, self.hr[idx], lq, lq_up, self.codes[idx], noise,
                     [self.dataset.boxes[i] for i in idx], configs)

    # -- losses ---------------------------------------------------------------------
    def generator_parts(self, batch, restored, x_mr):
        w = self.cfg.weights
        _, adv = adversarial_losses(self.discriminator, None, restored, w.adv_scale_weights)
        return {
            "adv": adv,
            "rec_prime": huber(x_mr, batch.x_hr, w.huber_delta),
            "rec": huber(restored, batch.x_hr, w.huber_delta),
            "vgg": perceptual_loss(self.feature_net, restored, batch.x_hr, w.vgg_layer_weights),
            "cCX": component_contextual_loss(restored, batch.x_hr, batch.boxes, self.feature_net,
                                             w.cx_stages, w.cx_bandwidth),
        }

    def discriminator_step(self, batch, fake):
        w = self.cfg.weights
        self.opt_d.zero_grad()
        loss_d, _ = adversarial_losses(self.discriminator, Tensor(batch.x_hr), Tensor(fake),
                                       w.adv_scale_weights)
        backward(-loss_d)
        self.opt_d.step()
        return loss_d.item()

    def memory_step(self, batch, step):
        c = self.cfg
        self.opt_q.zero_grad()
        q = self.query(batch.lq)
        terms = [wmm_loss(self.bank, q[i], batch.z_w[i], c.margin, c.eta, c.kl_temperature).loss
                 for i in range(q.shape[0])]
        loss = terms[0]
        for t in terms[1:]:
            loss = loss + t
        loss = loss * (1.0 / len(terms))
        backward(loss)
        self.opt_q.step()
        counts = {"merged": 0, "written": 0, "evicted": 0}
        for i in range(q.shape[0]):
            rep = memory_update(self.bank, q.data[i], batch.z_w[i], c.eta, step, c.kl_temperature)
            counts[rep.action] += 1
            counts["evicted"] += int(rep.evicted)
        return loss.item(), counts

    # -- loop -----------------------------------------------------------------------
    def train_step(self):
        step = self.step_index
        batch = self.prepare_batch(step)
        t0 = time.perf_counter()
        self.generator.zero_grad()
        restored, x_mr = self.generator(batch.lq_up, batch.noise, batch.z_w)
        loss_d = self.discriminator_step(batch, restored.data)
        self.opt_g.zero_grad()
        parts = self.generator_parts(batch, restored, x_mr)
        total = total_loss(parts, self.cfg.weights)
        values = {k: parts[k].item() for k in parts}
        values["total"] = total.item()
        values["loss_D"] = loss_d
        if not all(math.isfinite(v) for v in values.values()):
            self._dump(batch, step, values)
            raise TrainingDiverged(f"non-finite loss at step {step}: {values}")
        backward(total)
        self.opt_g.step()
        wmm, counts = self.memory_step(batch, step)
        if not math.isfinite(wmm):
            self._dump(batch, step, values)
            raise TrainingDiverged(f"non-finite memory loss at step {step}")
        record = {"step": step, "seed": self.cfg.seed, **values, "wmm": wmm, **counts,
                  "bank": len(self.bank), "wall": time.perf_counter() - t0}
        self.history.append(record)
        self.step_index += 1
        return record

    def run(self, steps=None, log=None):
        """Train for ``steps`` (default cfg.steps); ``log`` receives one line per logged step."""
        steps = self.cfg.steps if steps is None else steps
        for _ in range(steps):
            rec = self.train_step()
            if log is not None and (rec["step"] % self.cfg.log_every == 0 or
                                    rec["step"] == steps - 1):
                log(format_log_line(rec))
            k = self.cfg.checkpoint_every
            if self.out_dir and k and (rec["step"] + 1) % k == 0:
                self.save(os.path.join(self.out_dir, f"ckpt_{rec['step'] + 1:06d}"))
        return self.history

    def save(self, stem):
        """Write ``stem.mmbank`` and ``stem.mmckpt``; returns the checkpoint path."""
        os.makedirs(os.path.dirname(os.path.abspath(stem)), exist_ok=True)
        bank_path = stem + ".mmbank"
        self.bank.save(bank_path)
        tensors = {f"generator.{k}": v for k, v in self.generator.state_dict().items()}
        tensors.update({f"query.{k}": v for k, v in self.query.state_dict().items()})
        tensors.update({f"discriminator.{k}": v for k, v in self.discriminator.state_dict().items()})
        config = {"generator": self.gen_cfg.to_dict(), "train": self.cfg.to_dict(),
                  "step": self.step_index}
        save_checkpoint(stem + ".mmckpt", config, tensors, bank_path)
        return stem + ".mmckpt"

    def _dump(self, batch, step, values):
        if not self.out_dir:
            return
        d = os.path.join(self.out_dir, f"diverged_step{step:06d}")
        os.makedirs(d, exist_ok=True)
        write_tensor(os.path.join(d, "x_hr.mmt"), batch.x_hr)
        write_tensor(os.path.join(d, "lq_up.mmt"), batch.lq_up)
        write_tensor(os.path.join(d, "noise.mmt"), batch.noise)
        write_tensor(os.path.join(d, "z_w.mmt"), batch.z_w)
        with open(os.path.join(d, "batch.json"), "w") as fh:
            json.dump({"step": step, "indices": batch.indices.tolist(), "losses": values,
                       "degradations": [c.to_dict() for c in batch.degradations]}, fh,
                      indent=1, default=str)


def _seed_of(seed, kind):
    """Integer master seed for a derived stream (used with degradation substreams)."""
    return int(np.random.SeedSequence([int(seed), kind]).generate_state(1)[0])


LOG_KEYS = ("step", "seed", "adv", "rec_prime", "rec", "vgg", "cCX", "total", "loss_D", "wmm",
            "merged", "written", "evicted", "bank")


INT_KEYS = ("step", "seed", "merged", "written", "evicted", "bank")


def format_log_line(rec):
    """``key=value`` pairs; the timing field ``wall`` always comes last."""
    parts = []
    for k in LOG_KEYS:
        v = rec[k]
        parts.append(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
    parts.append(f"wall={rec.get('wall', 0.0):.4f}")
    return " ".join(parts)


def parse_log_line(line):
    out = {}
    for tok in line.split():
        k, _, v = tok.partition("=")
        out[k] = int(v) if k in INT_KEYS else float(v)
    return out


def evaluate(trainer: Trainer, eval_seed=12345, scale_r=4, use_memory=True):
    """Per-image training-set Huber (ground-truth codes) and PSNR of restored vs bicubic.

    Each image gets a fixed degradation drawn from ``eval_seed``. Restored
    PSNR uses the inference path (retrieved code) when ``use_memory``.
    """
    from ..metrics import psnr
    from .inference import RestorationModel, restore

    g = trainer.gen_cfg
    w = trainer.cfg.weights
    model = RestorationModel(g, trainer.generator, trainer.query)
    rows = []
    with no_grad():
        for i, img in enumerate(trainer.dataset.images):
            dcfg = degradation_for(eval_seed, i, trainer.cfg.degrade_ranges, scale_r)
            lq, _ = degrade(img, dcfg)
            up = upsample_input([lq], g.resolution)[0]
            noise = substream(eval_seed + 1, i).normal(size=(1, g.noise_dim))
            out, _ = trainer.generator(to_signed(up)[None], noise, trainer.codes[i][None])
            h = huber(out, trainer.hr[i][None], w.huber_delta).item()
            if use_memory:
                rest = restore(lq, model, trainer.bank, seed=eval_seed + i, warn=False)
            else:
                rest = to_unit(out.data[0])
            rows.append({"index": i, "huber": h, "psnr_restored": psnr(rest, img),
                         "psnr_bicubic": psnr(np.clip(up, 0, 1), img)})
    return rows
