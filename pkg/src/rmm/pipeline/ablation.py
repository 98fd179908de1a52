"""Memory-capacity and block-count sweeps: short training runs, one metrics row each."""
from __future__ import annotations

import dataclasses
import time
import warnings

import numpy as np

from .networks import EncoderOnlyGenerator, Generator, GeneratorConfig
from .train import TrainConfig, Trainer, evaluate

CAPACITIES = (10, 50, 100, 200, 500, 1000)
BLOCK_COUNTS = tuple(range(8))
BASELINE_SCALES = 4


def run_variant(gen_cfg: GeneratorConfig, train_cfg: TrainConfig, generator_cls=Generator,
                dataset=None, eval_seed=12345):
    t0 = time.perf_counter()
    trainer = Trainer(gen_cfg, train_cfg, dataset=dataset, generator_cls=generator_cls)
    trainer.run()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rows = evaluate(trainer, eval_seed=eval_seed, scale_r=train_cfg.scale_r or 4)
    last = trainer.history[-1] if trainer.history else {}
    return {
        "steps": train_cfg.steps,
        "final_total": last.get("total", float("nan")),
        "final_rec": last.get("rec", float("nan")),
        "huber": float(np.mean([r["huber"] for r in rows])),
        "psnr_restored": float(np.mean([r["psnr_restored"] for r in rows])),
        "psnr_bicubic": float(np.mean([r["psnr_bicubic"] for r in rows])),
        "win_rate": float(np.mean([r["psnr_restored"] > r["psnr_bicubic"] for r in rows])),
        "bank_occupied": len(trainer.bank),
        "seconds": time.perf_counter() - t0,
    }


def capacity_sweep(gen_cfg=None, train_cfg=None, capacities=CAPACITIES, dataset=None, log=None):
    gen_cfg = gen_cfg or GeneratorConfig()
    train_cfg = train_cfg or TrainConfig(steps=200)
    out = []
    for cap in capacities:
        row = {"sweep": "memory_capacity", "value": int(cap)}
        row.update(run_variant(gen_cfg, dataclasses.replace(train_cfg, memory_capacity=int(cap)),
                               dataset=dataset))
        out.append(row)
        if log:
            log(format_row(row))
    return out


def block_sweep(gen_cfg=None, train_cfg=None, counts=BLOCK_COUNTS, dataset=None, log=None):
    """Block count 0 trains the encoder-only generator (no modulated decoder)."""
    gen_cfg = gen_cfg or GeneratorConfig()
    train_cfg = train_cfg or TrainConfig(steps=200)
    out = []
    for b in counts:
        if b == 0:
            cfg, cls = dataclasses.replace(gen_cfg, rm3_block_count=BASELINE_SCALES), \
                EncoderOnlyGenerator
        else:
            cfg, cls = dataclasses.replace(gen_cfg, rm3_block_count=int(b)), Generator
        row = {"sweep": "rm3_blocks", "value": int(b)}
        row.update(run_variant(cfg, train_cfg, cls, dataset=dataset))
        out.append(row)
        if log:
            log(format_row(row))
    return out


ROW_KEYS = ("sweep", "value", "steps", "final_total", "final_rec", "huber", "psnr_restored",
            "psnr_bicubic", "win_rate", "bank_occupied", "seconds")


def format_row(row):
    return " ".join(f"{k}={row[k]:.6g}" if isinstance(row[k], float) else f"{k}={row[k]}"
                    for k in ROW_KEYS)


def format_table(rows):
    head = f"{'sweep':<16}{'value':>6}{'huber':>10}{'psnr':>9}{'bicubic':>9}{'win':>7}{'bank':>6}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['sweep']:<16}{r['value']:>6}{r['huber']:>10.5f}{r['psnr_restored']:>9.3f}"
                     f"{r['psnr_bicubic']:>9.3f}{r['win_rate']:>7.3f}{r['bank_occupied']:>6}")
    return "\n".join(lines)
