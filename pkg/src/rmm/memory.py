"""Key-value wavelet memory: cosine retrieval, KL-gated triplet loss, merge/write updates.

Keys are unit-norm embeddings of degraded images; values are wavelet style
codes of the matching clean images. Slots are recycled least-recently-used
first once the bank is full.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError, RetrievalError
from .tensor import Tensor, as_tensor, matmul

DEFAULT_CAPACITY = 982
DEFAULT_MARGIN = 0.1
DEFAULT_ETA = 0.7
MAGIC = b"MMBANK01"


class MemoryBank:
    def __init__(self, capacity=DEFAULT_CAPACITY, key_dim=64, value_dim=45):
        if capacity < 1:
            raise ContractError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.keys = np.zeros((capacity, key_dim))
        self.values = np.zeros((capacity, value_dim))
        self.last_access = np.zeros(capacity, dtype=np.int64)
        self.occupied = np.zeros(capacity, dtype=bool)

    @property
    def key_dim(self):
        return self.keys.shape[1]

    @property
    def value_dim(self):
        return self.values.shape[1]

    def __len__(self):
        return int(self.occupied.sum())

    def occupied_indices(self):
        return np.flatnonzero(self.occupied)

    def similarities(self, q):
        """Cosine similarity of ``q`` to every occupied key, as (indices, sims)."""
        idx = self.occupied_indices()
        return idx, self.keys[idx] @ _unit(q)

    def copy(self):
        other = MemoryBank(self.capacity, self.key_dim, self.value_dim)
        for name in ("keys", "values", "last_access", "occupied"):
            setattr(other, name, getattr(self, name).copy())
        return other

    # -- persistence ----------------------------------------------------------
    def to_bytes(self):
        parts = [MAGIC, struct.pack("<III", self.capacity, self.key_dim, self.value_dim)]
        for i in range(self.capacity):
            parts.append(struct.pack("<BQ", int(self.occupied[i]), int(self.last_access[i])))
            parts.append(self.keys[i].astype("<f8").tobytes())
            parts.append(self.values[i].astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf):
        if buf[:8] != MAGIC:
            raise FormatError("bad bank magic; expected MMBANK01")
        if len(buf) < 20:
            raise FormatError("bank header truncated")
        cap, dk, dv = struct.unpack_from("<III", buf, 8)
        slot = 9 + 8 * (dk + dv)
        if len(buf) != 20 + cap * slot:
            raise FormatError(f"bank size mismatch: {len(buf)} bytes for capacity {cap}")
        bank = cls(cap, dk, dv)
        off = 20
        for i in range(cap):
            occ, last = struct.unpack_from("<BQ", buf, off)
            off += 9
            bank.occupied[i] = bool(occ)
            bank.last_access[i] = last
            bank.keys[i] = np.frombuffer(buf, "<f8", dk, off)
            off += 8 * dk
            bank.values[i] = np.frombuffer(buf, "<f8", dv, off)
            off += 8 * dv
        return bank

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _unit(v):
    v = np.asarray(getattr(v, "data", v), dtype=np.float64).reshape(-1)
    n = np.linalg.norm(v)
    if n == 0:
        raise ContractError("query has zero norm")
    return v / n


def knn_retrieve(bank: MemoryBank, q, k=1):
    """Top-``k`` occupied slots by cosine similarity, ties to the lower index."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    idx, sims = bank.similarities(q)
    if len(idx) == 0:
        raise RetrievalError("memory bank is empty")
    if len(idx) < k:
        raise RetrievalError(f"bank has {len(idx)} occupied slots, fewer than k={k}")
    order = np.lexsort((idx, -sims))[:k]
    return [(int(idx[o]), float(sims[o])) for o in order]


def _log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def wavelet_kl(v, z, temperature=1.0):
    """KL(softmax(v/T) || softmax(z/T)). Vectorised over leading axes of ``v``."""
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if v.shape[-1] != z.shape[-1]:
        raise ContractError(f"code length mismatch: {v.shape[-1]} vs {z.shape[-1]}")
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    lp = _log_softmax(v / temperature)
    lq = _log_softmax(z / temperature)
    kl = (np.exp(lp) * (lp - lq)).sum(axis=-1)
    return np.maximum(kl, 0.0)


@dataclass
class TripletResult:
    loss: object  # Tensor when q was a Tensor, else float
    positive: int | None
    negative: int | None


def wmm_loss(bank: MemoryBank, q, z_w, margin=DEFAULT_MARGIN, eta=DEFAULT_ETA, temperature=1.0):
    """Hinge triplet loss in cosine-distance form.

    The positive is the most similar slot whose value passes the KL gate
    (KL < eta), the negative the most similar slot failing it (KL > eta).
    Gradient reaches ``q`` only; stored keys are constants. If either side
    is missing the loss is zero.
    """
    if margin < 0:
        raise ContractError("margin must be >= 0")
    idx, sims = bank.similarities(q)
    pos = neg = None
    if len(idx):
        kl = wavelet_kl(bank.values[idx], z_w, temperature)
        order = np.lexsort((idx, -sims))
        for o in order:
            if pos is None and kl[o] < eta:
                pos = int(idx[o])
            elif neg is None and kl[o] > eta:
                neg = int(idx[o])
            if pos is not None and neg is not None:
                break
    is_tensor = isinstance(q, Tensor)
    if pos is None or neg is None:
        return TripletResult(Tensor(0.0) if is_tensor else 0.0, pos, neg)
    qt = as_tensor(q).reshape(1, -1)
    pair = Tensor(np.stack([bank.keys[pos], bank.keys[neg]], axis=1))
    s = matmul(qt, pair).reshape(2)
    # (1 - s_p) - (1 - s_n) + m
    hinge = s[1] - s[0] + margin
    loss = hinge * float(hinge.data > 0)
    return TripletResult(loss if is_tensor else float(loss.data), pos, neg)


@dataclass
class UpdateReport:
    action: str  # "merged" or "written"
    slot: int
    evicted: bool = False


def memory_update(bank: MemoryBank, q, z_w, eta=DEFAULT_ETA, step=0, temperature=1.0):
    """Merge ``q`` into the top-1 key if its value passes the KL gate, else write a new slot."""
    qv = _unit(q)
    z = np.asarray(z_w, dtype=np.float64).reshape(-1)
    if len(bank):
        (t1, _), = knn_retrieve(bank, qv, 1)
        if wavelet_kl(bank.values[t1], z, temperature) < eta:
            merged = (qv + bank.keys[t1]) / 2.0
            nrm = np.linalg.norm(merged)
            bank.keys[t1] = merged / nrm if nrm > 0 else qv
            bank.last_access[t1] = step
            return UpdateReport("merged", t1)
    empty = np.flatnonzero(~bank.occupied)
    evicted = len(empty) == 0
    slot = int(empty[0]) if not evicted else int(np.argmin(bank.last_access))
    bank.keys[slot] = qv
    bank.values[slot] = z
    bank.last_access[slot] = step
    bank.occupied[slot] = True
    return UpdateReport("written", slot, evicted)


def bank_stats(bank: MemoryBank, bins=10):
    """Occupancy, last-access histogram and similarity-to-centroid histogram."""
    idx = bank.occupied_indices()
    out = {"capacity": bank.capacity, "occupied": int(len(idx)),
           "key_dim": bank.key_dim, "value_dim": bank.value_dim}
    if len(idx) == 0:
        return out
    counts, edges = np.histogram(bank.last_access[idx], bins=bins)
    out["access_hist"] = {"counts": counts.tolist(), "edges": edges.tolist()}
    centroid = bank.keys[idx].mean(axis=0)
    cn = np.linalg.norm(centroid)
    sims = bank.keys[idx] @ (centroid / cn) if cn > 0 else np.zeros(len(idx))
    counts, edges = np.histogram(sims, bins=bins, range=(-1.0, 1.0))
    out["centroid_sim_hist"] = {"counts": counts.tolist(), "edges": edges.tolist()}
    out["centroid_sim_mean"] = float(sims.mean())
    return out
