"""Procedural toy faces with analytically known eye and mouth boxes."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from ..degradation import substream
from ..errors import ContractError

BOX_PAD = 2


@dataclass
class ToyFaceSpec:
    """Geometry and colours of one face, in pixel units of a ``resolution`` canvas."""

    resolution: int
    head_center: tuple
    head_radii: tuple
    eye_offset: tuple  # (dx, dy) of each eye from the head centre; eyes mirror in x
    eye_radii: tuple
    mouth_center: tuple
    mouth_width: float
    mouth_depth: float
    mouth_thickness: float
    background_top: tuple
    background_bottom: tuple
    skin: tuple
    feature: tuple
    texture_amplitude: float
    texture_seed: int

    @classmethod
    def sample(cls, rng, resolution):
        r = float(resolution)
        cx = r * rng.uniform(0.45, 0.55)
        cy = r * rng.uniform(0.47, 0.55)
        rx = r * rng.uniform(0.28, 0.36)
        ry = r * rng.uniform(0.34, 0.42)
        return cls(
            resolution=int(resolution),
            head_center=(cx, cy),
            head_radii=(rx, ry),
            eye_offset=(rx * rng.uniform(0.35, 0.5), ry * rng.uniform(0.2, 0.35)),
            eye_radii=(rx * rng.uniform(0.12, 0.2), ry * rng.uniform(0.06, 0.12)),
            mouth_center=(cx, cy + ry * rng.uniform(0.4, 0.55)),
            mouth_width=rx * rng.uniform(0.4, 0.65),
            mouth_depth=ry * rng.uniform(0.05, 0.15),
            mouth_thickness=r * rng.uniform(0.02, 0.04),
            background_top=tuple(rng.uniform(0.0, 1.0, 3)),
            background_bottom=tuple(rng.uniform(0.0, 1.0, 3)),
            skin=tuple(rng.uniform(0.45, 0.95, 3)),
            feature=tuple(rng.uniform(0.0, 0.3, 3)),
            texture_amplitude=float(rng.uniform(0.0, 0.04)),
            texture_seed=int(rng.integers(2 ** 31)),
        )

    def eye_centers(self):
        cx, cy = self.head_center
        dx, dy = self.eye_offset
        return (cx - dx, cy - dy), (cx + dx, cy - dy)

    def head_box(self):
        (cx, cy), (rx, ry) = self.head_center, self.head_radii
        return _clip_box((cy - ry, cx - rx, cy + ry, cx + rx), self.resolution)

    def boxes(self):
        """Component rectangles (top, left, bottom, right), half-open, inside the image."""
        out = {}
        ex, ey = self.eye_radii
        for name, (x, y) in zip(("left_eye", "right_eye"), self.eye_centers()):
            out[name] = _clip_box((y - ey - BOX_PAD, x - ex - BOX_PAD,
                                   y + ey + BOX_PAD, x + ex + BOX_PAD), self.resolution)
        mx, my = self.mouth_center
        half = self.mouth_width / 2
        pad = self.mouth_thickness + BOX_PAD
        out["mouth"] = _clip_box((my - pad, mx - half - pad, my + self.mouth_depth + pad,
                                  mx + half + pad), self.resolution)
        return out


def _clip_box(box, res):
    top, left, bottom, right = box
    top, left = max(0, int(np.floor(top))), max(0, int(np.floor(left)))
    bottom, right = min(res, int(np.ceil(bottom))), min(res, int(np.ceil(right)))
    return (top, left, bottom, right)


def _soft(signed):
    """Anti-aliased coverage from a signed distance-like field (negative = inside)."""
    return np.clip(0.5 - signed, 0.0, 1.0)


def render_face(spec: ToyFaceSpec):
    """Render to a (3, R, R) array in [0, 1], quantized to 8-bit levels."""
    r = spec.resolution
    yy, xx = np.mgrid[0:r, 0:r] + 0.5
    t = (yy / r)[None]
    img = (1 - t) * np.asarray(spec.background_top)[:, None, None] + \
        t * np.asarray(spec.background_bottom)[:, None, None]

    def paint(mask, colour):
        nonlocal img
        img = img * (1 - mask[None]) + mask[None] * np.asarray(colour)[:, None, None]

    def ellipse(center, radii):
        d = np.sqrt(((xx - center[0]) / radii[0]) ** 2 + ((yy - center[1]) / radii[1]) ** 2)
        return _soft((d - 1.0) * min(radii))

    paint(ellipse(spec.head_center, spec.head_radii), spec.skin)
    for c in spec.eye_centers():
        paint(ellipse(c, spec.eye_radii), spec.feature)
    mx, my = spec.mouth_center
    half = spec.mouth_width / 2
    u = np.clip((xx - mx) / half, -1.0, 1.0)
    curve = my + spec.mouth_depth * (1 - u * u)
    inside_x = _soft(np.abs(xx - mx) - half)
    paint(_soft(np.abs(yy - curve) - spec.mouth_thickness / 2) * inside_x, spec.feature)
    if spec.texture_amplitude > 0:
        tex = np.random.default_rng(spec.texture_seed).normal(0.0, spec.texture_amplitude, (1, r, r))
        img = img + tex
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


@dataclass
class ToyDataset:
    images: list
    boxes: list
    specs: list
    seed: int

    def __len__(self):
        return len(self.images)

    def manifest(self):
        return [{"index": i, "file": f"{i:05d}.png", "seed": self.seed,
                 "boxes": {k: list(v) for k, v in b.items()}}
                for i, b in enumerate(self.boxes)]

    def stack(self):
        return np.stack(self.images)


def synth_dataset(count, resolution=64, seed=0):
    """``count`` faces; image ``i`` depends only on (seed, i)."""
    if count < 1 or resolution < 16:
        raise ContractError(f"need count >= 1 and resolution >= 16, got {count}, {resolution}")
    specs = [ToyFaceSpec.sample(substream(seed, i), resolution) for i in range(count)]
    return ToyDataset([render_face(s) for s in specs], [s.boxes() for s in specs], specs, int(seed))


def save_dataset(ds: ToyDataset, out_dir):
    from ..imageio import write_png

    os.makedirs(out_dir, exist_ok=True)
    rows = ds.manifest()
    for img, row, spec in zip(ds.images, rows, ds.specs):
        write_png(os.path.join(out_dir, row["file"]), img)
        row["spec"] = asdict(spec)
    with open(os.path.join(out_dir, "manifest.jsonl"), "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return rows


def load_dataset(in_dir):
    """Read a directory written by :func:`save_dataset` (images and boxes)."""
    from ..imageio import read_png

    path = os.path.join(in_dir, "manifest.jsonl")
    with open(path) as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    images = [read_png(os.path.join(in_dir, r["file"])) for r in rows]
    boxes = [{k: tuple(v) for k, v in r["boxes"].items()} for r in rows]
    seed = rows[0].get("seed", 0) if rows else 0
    return ToyDataset(images, boxes, [None] * len(rows), seed)
