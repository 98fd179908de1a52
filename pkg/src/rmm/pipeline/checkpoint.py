"""MMCKPT01 checkpoint container.

Layout (little-endian): magic, u32 config length + UTF-8 JSON config,
u32 block count, then per block u32 name length + UTF-8 name + u64 blob
length + MMTENSR1 blob; finally u32 bank-path length + UTF-8 path and
u32 digest length + ASCII sha256 hex digest of the bank file (both may be
empty).
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

from ..errors import FormatError, IOFailure
from ..tensor import tensor_from_bytes, tensor_to_bytes

MAGIC = b"MMCKPT01"


@dataclass
class Checkpoint:
    config: dict
    tensors: dict = field(default_factory=dict)
    bank_path: str = ""
    bank_sha256: str = ""


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _lp(data: bytes, fmt="<I"):
    return struct.pack(fmt, len(data)) + data


def checkpoint_bytes(ckpt: Checkpoint):
    parts = [MAGIC, _lp(json.dumps(ckpt.config, sort_keys=True).encode()),
             struct.pack("<I", len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        parts.append(_lp(name.encode()))
        parts.append(_lp(tensor_to_bytes(ckpt.tensors[name]), "<Q"))
    parts.append(_lp(ckpt.bank_path.encode()))
    parts.append(_lp(ckpt.bank_sha256.encode()))
    return b"".join(parts)


def save_checkpoint(path, config, tensors, bank_path=None):
    """Write a checkpoint; ``bank_path`` is stored relative to the checkpoint directory."""
    ref = digest = ""
    if bank_path:
        digest = file_sha256(bank_path)
        base = os.path.dirname(os.path.abspath(path))
        ref = os.path.relpath(os.path.abspath(bank_path), base)
    ckpt = Checkpoint(config, dict(tensors), ref, digest)
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ckpt))
    return ckpt


class _Reader:
    def __init__(self, buf):
        self.buf, self.off = buf, 0

    def take(self, n):
        if self.off + n > len(self.buf):
            raise FormatError("checkpoint truncated")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def lp(self, fmt="<I"):
        return self.take(self.unpack(fmt))


def parse_checkpoint(buf):
    r = _Reader(buf)
    if r.take(8) != MAGIC:
        raise FormatError("bad checkpoint magic; expected MMCKPT01")
    try:
        config = json.loads(r.lp().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint config is not valid JSON: {exc}") from exc
    tensors = {}
    for _ in range(r.unpack("<I")):
        name = r.lp().decode()
        arr, used = tensor_from_bytes(r.lp("<Q"))
        tensors[name] = arr
    bank_path = r.lp().decode()
    digest = r.lp().decode()
    if r.off != len(buf):
        raise FormatError("trailing bytes after checkpoint")
    return Checkpoint(config, tensors, bank_path, digest)


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except FileNotFoundError as exc:
        raise IOFailure(f"no such checkpoint: {path}") from exc
    return parse_checkpoint(buf)


def resolve_bank(ckpt: Checkpoint, ckpt_path, verify=True):
    """Absolute path of the referenced bank, checking its digest."""
    if not ckpt.bank_path:
        return None
    path = os.path.join(os.path.dirname(os.path.abspath(ckpt_path)), ckpt.bank_path)
    if not os.path.exists(path):
        raise IOFailure(f"referenced bank file missing: {path}")
    if verify and file_sha256(path) != ckpt.bank_sha256:
        raise FormatError(f"bank file {path} does not match the checkpoint digest")
    return path
