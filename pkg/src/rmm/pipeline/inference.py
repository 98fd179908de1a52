"""Inference: load a trained model and restore images with memory-retrieved codes."""
from __future__ import annotations

import warnings

import numpy as np

from ..errors import ContractError
from ..memory import MemoryBank, knn_retrieve
from ..tensor import Tensor, no_grad
from .checkpoint import load_checkpoint, resolve_bank
from .networks import (Generator, GeneratorConfig, QueryEncoder, query_encode,
                       upsample_input)


class RestorationModel:
    def __init__(self, gen_cfg: GeneratorConfig, generator: Generator, query: QueryEncoder):
        self.gen_cfg = gen_cfg
        self.generator = generator
        self.query = query

    @classmethod
    def from_checkpoint(cls, ckpt):
        cfg = GeneratorConfig.from_dict(ckpt.config["generator"])
        train = ckpt.config.get("train", {})
        rng = np.random.default_rng(0)
        gen = Generator(cfg, rng)
        query = QueryEncoder(rng, key_dim=train.get("key_dim", 64), channels=cfg.channels)
        for prefix, module in (("generator.", gen), ("query.", query)):
            state = {k[len(prefix):]: v for k, v in ckpt.tensors.items() if k.startswith(prefix)}
            module.load_state_dict(state)
        return cls(cfg, gen, query)


def load_model(path, bank_path=None):
    """Model and memory bank from a checkpoint (the referenced bank unless overridden)."""
    ckpt = load_checkpoint(path)
    model = RestorationModel.from_checkpoint(ckpt)
    bank_file = bank_path or resolve_bank(ckpt, path)
    if bank_file:
        bank = MemoryBank.load(bank_file)
    else:
        bank = MemoryBank(1, model.query.fc.weight.shape[0], model.gen_cfg.wavelet_dim)
    return model, bank


def retrieve_code(model: RestorationModel, bank: MemoryBank, lq, warn=True):
    """(code, slot) for one low-quality image; zeros and slot None on an empty bank."""
    if bank.value_dim != model.gen_cfg.wavelet_dim:
        raise ContractError(f"bank values have length {bank.value_dim}, "
                            f"generator expects {model.gen_cfg.wavelet_dim}")
    if len(bank) == 0:
        if warn:
            warnings.warn("memory bank is empty; using a zero wavelet code", stacklevel=2)
        return np.zeros(model.gen_cfg.wavelet_dim), None
    with no_grad():
        q = query_encode(model.query, lq).data
    (slot, _), = knn_retrieve(bank, q, 1)
    return bank.values[slot].copy(), slot


def restore(lq, model: RestorationModel, bank: MemoryBank, seed=0, warn=True, record=None):
    """Restore one (C, h, w) image in [0, 1]; returns a (C, R, R) image in [0, 1]."""
    lq = np.asarray(lq, dtype=np.float64)
    if lq.ndim != 3 or lq.shape[0] != model.gen_cfg.channels:
        raise ContractError(f"expected a ({model.gen_cfg.channels}, h, w) image, got {lq.shape}")
    code, _ = retrieve_code(model, bank, lq, warn)
    noise = np.random.default_rng(seed).normal(size=(1, model.gen_cfg.noise_dim))
    up = 2.0 * upsample_input([lq], model.gen_cfg.resolution) - 1.0
    with no_grad():
        out, _ = model.generator(Tensor(up), noise, code[None], record)
    return (out.data[0] + 1.0) / 2.0
