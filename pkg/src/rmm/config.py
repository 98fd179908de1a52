"""Flat ``key = value`` run configuration with a registry of dotted keys.

Every tunable is addressed as ``section.name``. Files hold one assignment
per line; ``#`` starts a comment. Unknown keys are rejected.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import ConfigError, IOFailure

PUBLISHED = "published"
TOOL = "tool default"


class UnknownKey(ConfigError):
    """A key that is not in the registry (a usage error, not a contract error)."""


@dataclass(frozen=True)
class Key:
    name: str
    default: object
    kind: str  # int | float | str | ints | floats | range
    provenance: str
    help: str


_KEYS = [
    # data
    Key("data.count", 64, "int", TOOL, "number of procedural images"),
    Key("data.resolution", 64, "int", TOOL, "image side length"),
    # degradation
    Key("degrade.scale_r", (2, 12), "range", PUBLISHED, "downsampling factor range (inclusive)"),
    Key("degrade.noise_sigma", (1.0, 15.0), "range", PUBLISHED, "Gaussian noise sigma range, 8-bit units"),
    Key("degrade.jpeg_quality", (40, 80), "range", PUBLISHED, "JPEG quality range (inclusive)"),
    Key("degrade.gaussian_sigma", (1.0, 5.0), "range", PUBLISHED, "Gaussian blur sigma range"),
    Key("degrade.motion_length", (3, 11), "range", TOOL, "motion blur length range (pixels)"),
    # generator
    Key("generator.resolution", 64, "int", TOOL, "working resolution"),
    Key("generator.blocks", 4, "int", TOOL, "number of modulation blocks (7 in the full model)"),
    Key("generator.wavelet_levels", 2, "int", TOOL, "wavelet packet levels n (4 in the full model)"),
    Key("generator.noise_dim", 512, "int", PUBLISHED, "input noise dimension"),
    Key("generator.widths", (8, 16, 32, 32), "ints", TOOL, "channel width per scale"),
    Key("generator.mapping_width", 512, "int", TOOL, "mapping network width"),
    Key("generator.mapping_layers", 4, "int", TOOL, "mapping network depth"),
    Key("generator.noise_embed_dim", 64, "int", TOOL, "per-block noise embedding size"),
    Key("generator.gate_channels", 1, "int", TOOL, "fusion gate channels (1 or block width)"),
    # training
    Key("train.steps", 2000, "int", TOOL, "optimization steps"),
    Key("train.batch", 8, "int", PUBLISHED, "batch size"),
    Key("train.lr", 2e-4, "float", PUBLISHED, "Adam learning rate"),
    Key("train.beta1", 0.5, "float", PUBLISHED, "Adam beta1"),
    Key("train.beta2", 0.999, "float", PUBLISHED, "Adam beta2"),
    Key("train.scale_r", 0, "int", TOOL, "fixed downsampling factor (0 samples degrade.scale_r)"),
    Key("train.log_every", 1, "int", TOOL, "log line interval"),
    Key("train.checkpoint_every", 0, "int", TOOL, "checkpoint interval (0 = final only)"),
    Key("train.disc_width", 8, "int", TOOL, "discriminator base width"),
    Key("train.key_dim", 64, "int", TOOL, "memory key dimension"),
    # memory
    Key("memory.capacity", 982, "int", PUBLISHED, "memory slots"),
    Key("memory.eta", 0.7, "float", PUBLISHED, "KL threshold for merge and positive selection"),
    Key("memory.margin", 0.1, "float", PUBLISHED, "triplet margin"),
    Key("memory.temperature", 1.0, "float", TOOL, "softmax temperature inside the wavelet KL"),
    # losses
    Key("loss.lambda_rec", 100.0, "float", PUBLISHED, "weight of the output reconstruction loss"),
    Key("loss.lambda_rec_prime", 100.0, "float", PUBLISHED, "weight of the refined-input reconstruction loss"),
    Key("loss.lambda_cCX", 1.0, "float", PUBLISHED, "weight of the component contextual loss"),
    Key("loss.adv_weights", (4.0, 2.0, 1.0, 1.0), "floats", PUBLISHED, "adversarial weights per scale"),
    Key("loss.adv_scales", (1, 2, 4, 8), "ints", PUBLISHED, "discriminator downsampling factors"),
    Key("loss.vgg_weights", (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0), "floats", PUBLISHED,
        "perceptual stage weights"),
    Key("loss.huber_delta", 0.1, "float", TOOL, "Huber threshold (images in [-1, 1])"),
    Key("loss.cx_bandwidth", 0.5, "float", TOOL, "contextual similarity bandwidth"),
    Key("loss.cx_stages", (2, 3), "ints", TOOL, "feature stages used by the contextual loss"),
    # wavelet
    Key("wpd.levels", 2, "int", TOOL, "levels for the wpd subcommand"),
    Key("wpd.pooling", "mean", "str", TOOL, "code pooling: mean or abs"),
]
REGISTRY = {k.name: k for k in _KEYS}

# keys shown in each subcommand's help
SECTIONS = {
    "synth-data": ("data",),
    "degrade": ("degrade",),
    "train": ("data", "degrade", "generator", "train", "memory", "loss"),
    "restore": ("generator",),
    "wpd": ("wpd",),
    "dump-attn": ("generator",),
    "memory": ("memory",),
    "metrics": (),
    "gradcheck": (),
}


def parse_value(key: Key, text):
    text = str(text).strip()
    try:
        if key.kind == "int":
            return int(text)
        if key.kind == "float":
            return float(text)
        if key.kind == "str":
            return text
        items = [t for t in text.replace(" ", "").split(",") if t]
        if key.kind == "ints":
            return tuple(int(t) for t in items)
        if key.kind == "floats":
            return tuple(_frac(t) for t in items)
        if key.kind == "range":
            vals = tuple(_frac(t) for t in items)
            if len(vals) != 2 or vals[0] > vals[1]:
                raise ValueError("range needs lo,hi with lo <= hi")
            if isinstance(key.default[0], int):
                vals = tuple(int(v) for v in vals)
            return vals
    except ValueError as exc:
        raise ConfigError(f"bad value for {key.name}: {text!r} ({exc})") from exc
    raise ConfigError(f"unsupported kind {key.kind}")


def _frac(text):
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def format_value(value):
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


class RunConfig:
    """Defaults overlaid by a config file and then by explicit overrides."""

    def __init__(self, values=None):
        self.values = {k.name: k.default for k in _KEYS}
        self.sources = {k.name: "default" for k in _KEYS}
        for name, v in (values or {}).items():
            self.set(name, v, "api")

    def set(self, name, value, source="override"):
        key = REGISTRY.get(name)
        if key is None:
            raise UnknownKey(f"unknown config key {name!r}")
        self.values[name] = parse_value(key, value) if isinstance(value, str) else value
        self.sources[name] = source

    def __getitem__(self, name):
        if name not in REGISTRY:
            raise UnknownKey(f"unknown config key {name!r}")
        return self.values[name]

    def load_file(self, path):
        try:
            with open(path) as fh:
                lines = fh.readlines()
        except FileNotFoundError as exc:
            raise IOFailure(f"no such config file: {path}") from exc
        for n, raw in enumerate(lines, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            name, value = (s.strip() for s in line.split("=", 1))
            self.set(name, value, f"{os.path.basename(path)}:{n}")
        return self

    def apply_overrides(self, items):
        for item in items or []:
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like key=value")
            name, value = (s.strip() for s in item.split("=", 1))
            self.set(name, value, "override")
        return self

    def dump(self):
        lines = ["# effective configuration"]
        for name in sorted(self.values):
            lines.append(f"{name} = {format_value(self.values[name])}")
        return "\n".join(lines) + "\n"

    def echo(self, out_dir, filename="config.txt"):
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, filename)
        with open(path, "w") as fh:
            fh.write(self.dump())
        return path

    # -- builders ------------------------------------------------------------------
    def degrade_ranges(self):
        return {name.split(".", 1)[1]: self.values[name] for name in REGISTRY
                if name.startswith("degrade.")}

    def generator_config(self):
        from .pipeline.networks import GeneratorConfig

        v = self.values
        return GeneratorConfig(
            resolution=v["generator.resolution"], rm3_block_count=v["generator.blocks"],
            noise_dim=v["generator.noise_dim"], wavelet_levels=v["generator.wavelet_levels"],
            widths=v["generator.widths"], mapping_width=v["generator.mapping_width"],
            mapping_layers=v["generator.mapping_layers"],
            noise_embed_dim=v["generator.noise_embed_dim"],
            gate_channels=v["generator.gate_channels"])

    def loss_weights(self):
        from .objectives import LossWeights

        v = self.values
        return LossWeights(
            lambda_rec=v["loss.lambda_rec"], lambda_rec_prime=v["loss.lambda_rec_prime"],
            lambda_cCX=v["loss.lambda_cCX"], adv_scale_weights=v["loss.adv_weights"],
            adv_scales=v["loss.adv_scales"], vgg_layer_weights=v["loss.vgg_weights"],
            huber_delta=v["loss.huber_delta"], cx_bandwidth=v["loss.cx_bandwidth"],
            cx_stages=v["loss.cx_stages"])

    def train_config(self, seed):
        from .pipeline.train import TrainConfig

        v = self.values
        return TrainConfig(
            steps=v["train.steps"], batch=v["train.batch"], lr=v["train.lr"],
            beta1=v["train.beta1"], beta2=v["train.beta2"], seed=int(seed),
            dataset_size=v["data.count"], scale_r=v["train.scale_r"],
            degrade_ranges=self.degrade_ranges(), memory_capacity=v["memory.capacity"],
            eta=v["memory.eta"], margin=v["memory.margin"],
            kl_temperature=v["memory.temperature"], key_dim=v["train.key_dim"],
            disc_width=v["train.disc_width"], log_every=v["train.log_every"],
            checkpoint_every=v["train.checkpoint_every"], weights=self.loss_weights())


def keys_help(sections):
    """Help text listing every key of ``sections`` with default and provenance."""
    rows = [k for k in _KEYS if k.name.split(".", 1)[0] in sections]
    if not rows:
        return ""
    width = max(len(k.name) for k in rows)
    lines = ["config keys (set with --set key=value or --config FILE):"]
    for k in rows:
        lines.append(f"  {k.name:<{width}}  default {format_value(k.default):<24} "
                     f"[{k.provenance}] {k.help}")
    return "\n".join(lines)
