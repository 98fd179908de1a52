"""8-bit PNG read/write for (C, H, W) float images in [0, 1]."""
from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import IOFailure


def to_uint8(image):
    img = np.asarray(image, dtype=np.float64)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, image):
    arr = to_uint8(image)
    if arr.ndim == 3:
        arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
    try:
        Image.fromarray(arr).save(path, format="PNG")
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def read_png(path):
    """Load as float64 (3, H, W) (RGB) or (1, H, W) (grayscale)."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = "L" if im.mode in ("L", "I", "I;16", "1") else "RGB"
            arr = np.asarray(im.convert(mode), dtype=np.float64) / 255.0
    except FileNotFoundError as exc:
        raise IOFailure(f"no such file: {path}") from exc
    except OSError as exc:
        raise IOFailure(f"cannot read image {path}: {exc}") from exc
    return arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
