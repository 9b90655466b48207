"""PNG import/export.

Internally ink is 1 on a 0 background; grayscale PNGs are stored inverted
(dark ink on white) for human viewing, and re-inverted on load. RGB images
(artistic glyphs) are stored as-is.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .corpus import GlyphImage


def save_png(image: GlyphImage, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    px = np.clip(image.pixels, 0.0, 1.0)
    if px.ndim == 2:
        arr = np.round((1.0 - px) * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path)
    else:
        arr = np.round(px * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(path)


def load_png(path: str | Path, char_id: int = -1, style_id: int = -1) -> GlyphImage:
    img = Image.open(path)
    if img.mode in ("RGB", "RGBA"):
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        return GlyphImage(arr, arr.shape[0], char_id, style_id)
    arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
    return GlyphImage(1.0 - arr, arr.shape[0], char_id, style_id)
