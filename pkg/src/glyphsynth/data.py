"""Rendered-array plumbing between the corpus and the models.

Training and evaluation consume (N, H, W) float32 stacks; content references
are rendered in a fixed neutral source style. Renders are cached per
(manifest seed, resolution) because rasterization, while cheap, is called for
every batch assembly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import CorpusManifest, GlyphSpec, StyleParams, render_glyph

SOURCE_STYLE = StyleParams(
    style_id=-1, stroke_width=0.06, slant=0.0, scale=0.72, aspect=1.0,
    jitter_seed=0, serif_flag=False,
)


class RenderCache:
    """Memoized renders keyed by (char_id, style_id, resolution); the source
    style is keyed with style_id -1."""

    def __init__(self, manifest: CorpusManifest):
        self.manifest = manifest
        self._cache: dict = {}

    def glyph(self, char_id: int, style_id: int, resolution: int) -> np.ndarray:
        key = (char_id, style_id, resolution)
        if key not in self._cache:
            style = SOURCE_STYLE if style_id == -1 else self.manifest.styles[style_id]
            img = render_glyph(self.manifest.glyphs[char_id], style, resolution,
                               self.manifest.table)
            self._cache[key] = img.pixels
        return self._cache[key]

    def content(self, char_id: int, resolution: int) -> np.ndarray:
        return self.glyph(char_id, -1, resolution)

    def stack(self, chars, styles, resolution: int):
        """All (char, style) renders: returns (images (N,H,W), char_ids,
        style_ids) in deterministic row-major order."""
        images, cids, sids = [], [], []
        for cid in chars:
            for sid in styles:
                images.append(self.glyph(cid, sid, resolution))
                cids.append(cid)
                sids.append(sid)
        return (np.stack(images).astype(np.float32), np.asarray(cids), np.asarray(sids))

    def save(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        keys = np.array([list(k) for k in self._cache], dtype=np.int64)
        np.savez_compressed(path, keys=keys,
                            **{f"img{i}": v for i, v in enumerate(self._cache.values())})

    def load(self, path: str | Path):
        with np.load(path) as d:
            keys = d["keys"]
            for i, k in enumerate(keys):
                self._cache[tuple(int(x) for x in k)] = d[f"img{i}"]
