"""Synthetic compositional glyph corpus: stroke/component primitives, glyph
specs, parametric styles, deterministic rasterization, and augmentations.

Glyphs are compositions of reusable components placed in disjoint axis-aligned
layout slots; components are bundles of parametric strokes drawn from a small
set of stroke categories. Everything is procedurally generated from seeds, so
component/stroke decompositions are exact ground truth.

Convention: ink is 1 on a 0 background internally (zero padding equals
background); PNG export inverts grayscale for viewing. Styles act per
component inside its slot, so removing a component only changes pixels inside
that slot.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

VALID_RESOLUTIONS = (16, 32, 64, 128, 256, 512, 1024)
SUPERSAMPLE = 4
CONTENT_MARGIN = 0.13  # glyph content box inset; keeps ink in-bounds at the augmentation extremes
JITTER_AMP = 0.012

ZOOM_BOUNDS = (0.8, 1.25)
STRETCH_BOUNDS = (0.8, 1.25)
ITALIC_BOUNDS = (-0.3, 0.3)


class CorpusError(ValueError):
    pass


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """One drawable polyline inside a component's unit box."""

    stroke_id: int
    points: tuple  # ((x, y), ...) in [0, 1]^2


@dataclass(frozen=True)
class ComponentPrimitive:
    id: int
    stroke_ids: tuple
    geometry: tuple  # tuple of Segment


@dataclass(frozen=True)
class ComponentTable:
    M: int
    N: int
    seed: int
    components: tuple  # tuple of ComponentPrimitive, index == id

    def strokes_of(self, component_id: int) -> tuple:
        return self.components[component_id].stroke_ids


@dataclass(frozen=True)
class GlyphSpec:
    char_id: int
    components: tuple  # ((component_id, slot), ...) with slot = (x0, y0, x1, y1)

    @property
    def m_c(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class StyleParams:
    style_id: int
    stroke_width: float  # fraction of the cell
    slant: float  # radians
    scale: float  # in (0, 1]
    aspect: float  # > 0
    jitter_seed: int
    serif_flag: bool
    jitter_amp: float = JITTER_AMP  # per-style stroke roughness
    taper: float = 0.0  # stroke width modulation along each stroke, in [0, 1)


@dataclass
class GlyphImage:
    pixels: np.ndarray  # (H, W) grayscale or (H, W, 3) RGB, values in [0, 1]
    resolution: int
    char_id: int
    style_id: int

    def __post_init__(self):
        p = self.pixels
        if p.ndim not in (2, 3) or p.shape[0] != p.shape[1]:
            raise CorpusError(f"glyph images must be square 2-D or 3-D, got {p.shape}")
        if p.ndim == 3 and p.shape[2] != 3:
            raise CorpusError("3-D glyph images must have 3 channels")


@dataclass
class CorpusManifest:
    table: ComponentTable
    glyphs: dict  # char_id -> GlyphSpec, includes reference characters
    styles: dict  # style_id -> StyleParams
    train_chars: tuple
    test_chars: tuple
    ref_chars: tuple
    train_styles: tuple
    test_styles: tuple
    config: dict = field(default_factory=dict)

    def decomp_table(self) -> dict:
        """char_id -> list of (component_id, stroke_ids, slot); the view the
        reference-mapping builder consumes (same shape as real-corpus imports)."""
        out = {}
        for cid, spec in self.glyphs.items():
            out[cid] = [
                {
                    "component_id": comp_id,
                    "stroke_ids": list(self.table.strokes_of(comp_id)),
                    "slot": list(slot),
                }
                for comp_id, slot in spec.components
            ]
        return out


# ---------------------------------------------------------------------------
# stroke archetypes and component generation
# ---------------------------------------------------------------------------


def _arc(cx, cy, r, a0, a1, n=14):
    ts = np.linspace(a0, a1, n)
    return tuple((cx + r * math.cos(t), cy + r * math.sin(t)) for t in ts)


def _base_shapes():
    """Polyline archetypes in the unit box; stroke categories cycle these with
    a deterministic per-category variation."""
    return [
        ((0.08, 0.5), (0.92, 0.5)),  # horizontal bar
        ((0.5, 0.08), (0.5, 0.92)),  # vertical bar
        ((0.12, 0.12), (0.88, 0.88)),  # falling diagonal
        ((0.12, 0.88), (0.88, 0.12)),  # rising diagonal
        _arc(0.62, 0.5, 0.38, math.pi * 0.55, math.pi * 1.45),  # left-open bowl
        _arc(0.38, 0.5, 0.38, -math.pi * 0.45, math.pi * 0.45),  # right-open bowl
        ((0.35, 0.08), (0.35, 0.8), (0.7, 0.92)),  # vertical with foot hook
        ((0.3, 0.35), (0.55, 0.6)),  # short tick
        _arc(0.5, 0.66, 0.4, math.pi * 1.15, math.pi * 1.85),  # top cap arc
        ((0.1, 0.25), (0.6, 0.25), (0.4, 0.75), (0.9, 0.75)),  # zigzag
    ]


def stroke_polyline(category: int, n_categories: int) -> tuple:
    """Deterministic polyline for a stroke category (no randomness here; the
    category fully determines the canonical shape)."""
    shapes = _base_shapes()
    base = shapes[category % len(shapes)]
    cycle = category // len(shapes)
    if cycle == 0:
        return tuple(base)
    # later cycles: rotate the archetype around the box center by a fixed angle
    ang = 0.35 * cycle
    ca, sa = math.cos(ang), math.sin(ang)
    out = []
    for x, y in base:
        dx, dy = x - 0.5, y - 0.5
        out.append((0.5 + ca * dx - sa * dy, 0.5 + sa * dx + ca * dy))
    return tuple(out)


def build_component_table(M: int, N: int, seed: int) -> ComponentTable:
    """M components over N stroke categories, each component using 1-4 distinct
    categories; regenerated until every category is used by some component."""
    if M < 4 or N < 2:
        raise CorpusError(f"need M >= 4 and N >= 2, got M={M}, N={N}")
    if N > 4 * M:
        raise CorpusError(f"cannot cover {N} stroke categories with {M} components")
    attempt = 0
    while True:
        rng = np.random.default_rng([seed, attempt])
        comps = []
        for cid in range(M):
            n_strokes = int(rng.integers(1, min(4, N) + 1))
            cats = tuple(int(c) for c in rng.choice(N, size=n_strokes, replace=False))
            segs = []
            for j, cat in enumerate(cats):
                pts = np.array(stroke_polyline(cat, N), dtype=np.float64)
                # place the stroke in a jittered horizontal band so multi-stroke
                # components read as stacked marks
                band_h = 1.0 / n_strokes
                y0 = j * band_h
                sx = 0.55 + 0.4 * rng.random()
                sy = band_h * (0.7 + 0.25 * rng.random())
                ox = rng.random() * (1.0 - sx)
                oy = y0 + rng.random() * max(band_h - sy, 0.0)
                placed = np.empty_like(pts)
                placed[:, 0] = ox + pts[:, 0] * sx
                placed[:, 1] = oy + pts[:, 1] * sy
                segs.append(Segment(stroke_id=cat, points=tuple(map(tuple, placed))))
            comps.append(ComponentPrimitive(id=cid, stroke_ids=cats, geometry=tuple(segs)))
        used = set()
        for c in comps:
            used.update(c.stroke_ids)
        if used == set(range(N)):
            return ComponentTable(M=M, N=N, seed=seed, components=tuple(comps))
        attempt += 1


# ---------------------------------------------------------------------------
# layouts and glyph specs
# ---------------------------------------------------------------------------

_T = 1.0 / 3.0
LAYOUT_TEMPLATES = {
    1: [((0.0, 0.0, 1.0, 1.0),)],
    2: [
        ((0.0, 0.0, 0.5, 1.0), (0.5, 0.0, 1.0, 1.0)),
        ((0.0, 0.0, 1.0, 0.5), (0.0, 0.5, 1.0, 1.0)),
    ],
    3: [
        ((0.0, 0.0, _T, 1.0), (_T, 0.0, 2 * _T, 1.0), (2 * _T, 0.0, 1.0, 1.0)),
        ((0.0, 0.0, 1.0, _T), (0.0, _T, 1.0, 2 * _T), (0.0, 2 * _T, 1.0, 1.0)),
        ((0.0, 0.0, 0.5, 1.0), (0.5, 0.0, 1.0, 0.5), (0.5, 0.5, 1.0, 1.0)),
    ],
    4: [
        ((0.0, 0.0, 0.5, 0.5), (0.5, 0.0, 1.0, 0.5), (0.0, 0.5, 0.5, 1.0), (0.5, 0.5, 1.0, 1.0)),
    ],
    5: [
        (
            (0.0, 0.0, 0.5, 0.5),
            (0.5, 0.0, 1.0, 0.5),
            (0.0, 0.5, _T, 1.0),
            (_T, 0.5, 2 * _T, 1.0),
            (2 * _T, 0.5, 1.0, 1.0),
        ),
    ],
    6: [
        (
            (0.0, 0.0, _T, 0.5),
            (_T, 0.0, 2 * _T, 0.5),
            (2 * _T, 0.0, 1.0, 0.5),
            (0.0, 0.5, _T, 1.0),
            (_T, 0.5, 2 * _T, 1.0),
            (2 * _T, 0.5, 1.0, 1.0),
        ),
    ],
}


def distinct_glyph_count(M: int, max_components: int) -> int:
    total = 0
    for m_c in range(1, max_components + 1):
        total += len(LAYOUT_TEMPLATES[m_c]) * M**m_c
    return total


def _sample_glyph_specs(rng, table: ComponentTable, n: int, max_components: int,
                        start_id: int, taken: set) -> list:
    """Distinct glyph specs; identity = (template, component tuple)."""
    weights = {1: 0.2, 2: 0.35, 3: 0.3, 4: 0.15, 5: 0.0, 6: 0.0}
    counts = [m for m in range(1, max_components + 1)]
    w = np.array([weights.get(m, 0.05) for m in counts], dtype=np.float64)
    w = w / w.sum()
    specs = []
    guard = 0
    while len(specs) < n:
        guard += 1
        if guard > 200 * n + 1000:
            raise CorpusError("could not sample enough distinct glyphs; raise M or max_components")
        m_c = int(rng.choice(counts, p=w))
        tmpl_i = int(rng.integers(len(LAYOUT_TEMPLATES[m_c])))
        comp_ids = tuple(int(c) for c in rng.integers(0, table.M, size=m_c))
        key = (m_c, tmpl_i, comp_ids)
        if key in taken:
            continue
        taken.add(key)
        slots = LAYOUT_TEMPLATES[m_c][tmpl_i]
        specs.append(
            GlyphSpec(
                char_id=start_id + len(specs),
                components=tuple(zip(comp_ids, slots)),
            )
        )
    return specs


def _cover_glyph_specs(rng, table: ComponentTable, needed_components: list,
                       n: int, max_components: int, start_id: int, taken: set) -> list:
    """Reference glyphs that jointly contain every component in
    needed_components, padded with random distinct glyphs up to n."""
    groups = []
    pending = list(needed_components)
    while pending:
        take = min(len(pending), max_components, 4)
        groups.append(pending[:take])
        pending = pending[take:]
    if len(groups) > n:
        uncovered = [c for g in groups[n:] for c in g]
        raise CorpusError(
            f"reference set of size {n} cannot cover all components; uncovered: {sorted(set(uncovered))}"
        )
    specs = []
    for gi, group in enumerate(groups):
        m_c = len(group)
        tmpl_i = int(rng.integers(len(LAYOUT_TEMPLATES[m_c])))
        comp_ids = tuple(group)
        key = (m_c, tmpl_i, comp_ids)
        if key in taken:  # collision with a sampled glyph: pick another template or reorder
            comp_ids = tuple(reversed(group))
            key = (m_c, tmpl_i, comp_ids)
            if key in taken:
                raise CorpusError("could not build a distinct cover glyph")
        taken.add(key)
        slots = LAYOUT_TEMPLATES[m_c][tmpl_i]
        specs.append(GlyphSpec(char_id=start_id + gi, components=tuple(zip(comp_ids, slots))))
    if len(specs) < n:
        specs.extend(
            _sample_glyph_specs(rng, table, n - len(specs), max_components,
                                start_id + len(specs), taken)
        )
    return specs


# ---------------------------------------------------------------------------
# styles
# ---------------------------------------------------------------------------

# style parameters live on a coarse grid of visibly-separated levels; stroke
# width stays capped so the thickest serifed style is legible at 32 px.
# "strong" dimensions carry robust low-resolution cues (edge width, glyph
# size, end blobs, wobble, taper); slant and aspect are weaker at 32 px.
STYLE_LEVELS = {
    "stroke_width": (0.032, 0.050, 0.068),
    "scale": (0.76, 0.92),
    "serif": (False, True),
    "jitter_amp": (0.004, 0.022),
    "taper": (0.0, 0.75),
    "slant": (-0.16, 0.0, 0.16),
    "aspect": (0.88, 1.0, 1.13),
}
_STRONG_DIMS = 5  # the first five axes above


def _sample_styles(rng, n: int) -> list:
    """Distinct grid styles: any two differ in at least two strong dimensions,
    or one strong plus two weak, so every pair has robust visual separation."""
    keys = ("stroke_width", "scale", "serif", "jitter_amp", "taper", "slant", "aspect")
    axes = [STYLE_LEVELS[k] for k in keys]
    sizes = [len(a) for a in axes]
    capacity = int(np.prod(sizes))
    combos = np.stack(np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij"),
                      axis=-1).reshape(-1, len(sizes))
    order = rng.permutation(capacity)

    def separated(a, b) -> bool:
        strong = int((a[:_STRONG_DIMS] != b[:_STRONG_DIMS]).sum())
        weak = int((a[_STRONG_DIMS:] != b[_STRONG_DIMS:]).sum())
        return strong >= 2 or (strong >= 1 and weak >= 2)

    chosen: list = []
    for idx in order:
        cand = combos[idx]
        if all(separated(cand, combos[c]) for c in chosen):
            chosen.append(int(idx))
        if len(chosen) == n:
            break
    if len(chosen) < n:
        raise CorpusError(f"could only place {len(chosen)} of {n} separated styles")
    styles = []
    for sid, idx in enumerate(chosen):
        lv = combos[idx]
        styles.append(
            StyleParams(
                style_id=sid,
                stroke_width=float(axes[0][lv[0]]),
                slant=float(axes[5][lv[5]]),
                scale=float(axes[1][lv[1]]),
                aspect=float(axes[6][lv[6]]),
                jitter_seed=int(rng.integers(2**31)),
                serif_flag=bool(axes[2][lv[2]]),
                jitter_amp=float(axes[3][lv[3]]),
                taper=float(axes[4][lv[4]]),
            )
        )
    return styles


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


def _stamp_segment(mask: np.ndarray, p0, p1, half_width_px: float, clip=None):
    """Union the pixels within half_width_px of segment p0-p1 (coords in px)
    into mask, touching only the segment's bounding window; `clip` bounds the
    window further (used to confine serif ink to its layout slot)."""
    S = mask.shape[0]
    r = half_width_px
    x0, y0 = p0
    x1, y1 = p1
    c0 = max(int(math.floor(min(x0, x1) - r - 1)), 0)
    c1 = min(int(math.ceil(max(x0, x1) + r + 1)) + 1, S)
    r0 = max(int(math.floor(min(y0, y1) - r - 1)), 0)
    r1 = min(int(math.ceil(max(y0, y1) + r + 1)) + 1, S)
    if clip is not None:
        cx0, cy0, cx1, cy1 = clip
        c0, c1 = max(c0, cx0), min(c1, cx1)
        r0, r1 = max(r0, cy0), min(r1, cy1)
    if c0 >= c1 or r0 >= r1:
        return
    ys = np.arange(r0, r1, dtype=np.float32)[:, None] + 0.5
    xs = np.arange(c0, c1, dtype=np.float32)[None, :] + 0.5
    dx, dy = x1 - x0, y1 - y0
    len2 = dx * dx + dy * dy
    if len2 < 1e-12:
        d2 = (xs - x0) ** 2 + (ys - y0) ** 2
    else:
        t = ((xs - x0) * dx + (ys - y0) * dy) / len2
        t = np.clip(t, 0.0, 1.0)
        d2 = (xs - (x0 + t * dx)) ** 2 + (ys - (y0 + t * dy)) ** 2
    mask[r0:r1, c0:c1] |= d2 <= r * r


BASE_FIT = 0.82  # nominal occupancy of a slot, leaving headroom for style scaling


def _densify(points: np.ndarray, max_step: float = 0.22) -> np.ndarray:
    """Insert midpoints until consecutive points are close, so per-point
    jitter produces visible stroke wobble rather than rigid displacement."""
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        dist = float(np.hypot(*(b - a)))
        n = max(1, int(math.ceil(dist / max_step)))
        for i in range(1, n + 1):
            out.append(a + (b - a) * (i / n))
    return np.asarray(out)


def _style_points(points: np.ndarray, style: StyleParams, slot_rect, pad: float,
                  jrng: np.random.Generator) -> np.ndarray:
    """Map component-unit points into a slot with the per-component style
    transform (shear, aspect, scale about the slot center). The transform is
    sized so the clamp against the slot rarely binds; per-point roughness is
    added in cell units afterwards and clipped into the padded slot."""
    x0, y0, x1, y1 = slot_rect
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    sx, sy = (x1 - x0), (y1 - y0)
    p = _densify(points)
    q = p - 0.5
    shear = math.tan(style.slant)
    qx = (q[:, 0] - shear * q[:, 1]) * BASE_FIT * sx
    qy = q[:, 1] * BASE_FIT * sy
    avail_x = max(sx / 2.0 - pad, 1e-3)
    avail_y = max(sy / 2.0 - pad, 1e-3)
    mx = np.abs(qx).max()
    my = np.abs(qy).max()
    f = min(1.0, avail_x / mx if mx > 0 else 1.0, avail_y / my if my > 0 else 1.0)
    out = np.empty_like(p)
    out[:, 0] = cx + qx * f
    out[:, 1] = cy + qy * f
    out += jrng.normal(0.0, style.jitter_amp, size=out.shape)
    out[:, 0] = np.clip(out[:, 0], x0 + pad, x1 - pad)
    out[:, 1] = np.clip(out[:, 1], y0 + pad, y1 - pad)
    return out


SERIF_LEN = 2.4  # serif half-length, in stroke half-widths
SERIF_R = 0.9  # serif stroke radius, in stroke half-widths


def _render_mask(spec: GlyphSpec, style: StyleParams, table: ComponentTable, S: int) -> np.ndarray:
    mask = np.zeros((S, S), dtype=bool)
    half_width = style.stroke_width / 2.0
    hw_px = max(half_width * S, 1.2)
    pad = half_width + 0.004  # skeleton confinement: stroke radius only
    content0 = CONTENT_MARGIN
    content_sz = 1.0 - 2 * CONTENT_MARGIN
    for comp_id, slot in spec.components:
        comp = table.components[comp_id]
        rect = (
            content0 + slot[0] * content_sz,
            content0 + slot[1] * content_sz,
            content0 + slot[2] * content_sz,
            content0 + slot[3] * content_sz,
        )
        # serif ink may poke past the skeleton pad; clip its stamps to the slot
        clip = (
            max(int(math.floor(rect[0] * S)), 0),
            max(int(math.floor(rect[1] * S)), 0),
            min(int(math.ceil(rect[2] * S)) + 1, S),
            min(int(math.ceil(rect[3] * S)) + 1, S),
        )
        # roughness keyed by component identity and slot, never by list
        # position, so erasing one component leaves the others untouched
        jrng = np.random.default_rng(
            [style.jitter_seed, spec.char_id, comp_id,
             int(slot[0] * 997), int(slot[1] * 997)]
        )
        for seg in comp.geometry:
            pts = np.asarray(seg.points, dtype=np.float64)
            placed = _style_points(pts, style, rect, pad, jrng)
            px = placed * S
            # arc positions along the stroke drive the taper profile
            seg_len = np.hypot(*(np.diff(px, axis=0).T)) + 1e-9
            u = np.concatenate([[0.0], np.cumsum(seg_len)]) / seg_len.sum()
            for a, b, ua, ub in zip(px[:-1], px[1:], u[:-1], u[1:]):
                r = hw_px * (1.0 + style.taper * (0.5 - (ua + ub) / 2.0))
                _stamp_segment(mask, a, b, max(r, 0.9), clip)
            if style.serif_flag and len(px) >= 2:
                for end, nbr in ((px[0], px[1]), (px[-1], px[-2])):
                    d = end - nbr
                    nrm = math.hypot(d[0], d[1])
                    if nrm < 1e-9:
                        continue
                    perp = np.array([-d[1], d[0]]) / nrm
                    _stamp_segment(mask, end - perp * SERIF_LEN * hw_px,
                                   end + perp * SERIF_LEN * hw_px, hw_px * SERIF_R, clip)
    return mask


def render_glyph(spec: GlyphSpec, style: StyleParams, resolution: int,
                 table: ComponentTable | None = None) -> GlyphImage:
    """Deterministic anti-aliased render: rasterize a boolean ink mask at 4x
    resolution and area-average down."""
    if resolution not in VALID_RESOLUTIONS:
        raise CorpusError(f"resolution {resolution} not in {VALID_RESOLUTIONS}")
    if table is None:
        raise CorpusError("render_glyph needs the component table")
    S = resolution * SUPERSAMPLE
    mask = _render_mask(spec, style, table, S)
    img = mask.reshape(resolution, SUPERSAMPLE, resolution, SUPERSAMPLE).mean(axis=(1, 3))
    return GlyphImage(
        pixels=img.astype(np.float32), resolution=resolution,
        char_id=spec.char_id, style_id=style.style_id,
    )


def area_downsample(pixels: np.ndarray, factor: int) -> np.ndarray:
    """Box-filter downsample by an integer factor."""
    h, w = pixels.shape[:2]
    if h % factor or w % factor:
        raise CorpusError(f"resolution {h}x{w} not divisible by {factor}")
    if pixels.ndim == 2:
        return pixels.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
    return pixels.reshape(h // factor, factor, w // factor, factor, 3).mean(axis=(1, 3))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def _affine_sample(pixels: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Bilinear resample with the inverse pixel map `mat` (2x2, about center);
    out-of-range source coordinates read 0 (background)."""
    h, w = pixels.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = ys - cy, xs - cx
    sy = mat[0, 0] * dy + mat[0, 1] * dx + cy
    sx = mat[1, 0] * dy + mat[1, 1] * dx + cx
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0
    out = np.zeros_like(pixels, dtype=np.float64)
    for oy, ox, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy = y0 + oy
        xx = x0 + ox
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = np.where(valid, pixels[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)], 0.0)
        out += wgt * vals
    return out


AUGMENT_KINDS = ("zoom", "h_stretch", "v_stretch", "italic")


def augment(image: GlyphImage, kind: str, magnitude: float,
            rng: np.random.Generator | None = None) -> GlyphImage:
    """Geometric glyph augmentation: zoom in/out, horizontal/vertical
    stretch, or italic shear. Identity magnitudes return the pixels unchanged;
    corpus renders carry enough margin that no ink is clipped in-bounds."""
    if kind not in AUGMENT_KINDS:
        raise CorpusError(f"unknown augmentation kind {kind!r}")
    if image.pixels.ndim != 2:
        raise CorpusError("geometric augmentation expects grayscale images")
    if kind == "zoom":
        lo, hi = ZOOM_BOUNDS
    elif kind == "italic":
        lo, hi = ITALIC_BOUNDS
    else:
        lo, hi = STRETCH_BOUNDS
    if not (lo <= magnitude <= hi):
        raise CorpusError(f"{kind} magnitude {magnitude} outside [{lo}, {hi}]")
    ident = 0.0 if kind == "italic" else 1.0
    if magnitude == ident:
        return GlyphImage(image.pixels.copy(), image.resolution, image.char_id, image.style_id)
    # inverse maps (output pixel -> source pixel)
    if kind == "zoom":
        mat = np.array([[1.0 / magnitude, 0.0], [0.0, 1.0 / magnitude]])
    elif kind == "h_stretch":
        mat = np.array([[1.0, 0.0], [0.0, 1.0 / magnitude]])
    elif kind == "v_stretch":
        mat = np.array([[1.0 / magnitude, 0.0], [0.0, 1.0]])
    else:  # italic: x' = x + s*(y - c)  =>  x = x' - s*(y - c)
        mat = np.array([[1.0, 0.0], [-magnitude, 1.0]])
    out = np.clip(_affine_sample(image.pixels.astype(np.float64), mat), 0.0, 1.0)
    return GlyphImage(out.astype(np.float32), image.resolution, image.char_id, image.style_id)


@dataclass(frozen=True)
class ArtisticEffect:
    outline_width: int = 0
    shadow_offset: tuple = (0, 0)  # (dy, dx) pixels
    fg_color: tuple = (0.0, 0.0, 0.0)
    bg_color: tuple = (1.0, 1.0, 1.0)
    outline_color: tuple = (0.0, 0.0, 0.0)
    shadow_color: tuple = (0.45, 0.45, 0.45)


def _shift_mask(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    ys_src = slice(max(-dy, 0), min(h - dy, h))
    xs_src = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = mask[ys_src, xs_src]
    return out


def artistic_augment(image: GlyphImage, effect: ArtisticEffect,
                     rng: np.random.Generator | None = None) -> GlyphImage:
    """Colored/textured glyph: threshold the grayscale glyph, render foreground
    in fg_color over bg_color, add an outline ring and a translated shadow
    composited under the glyph."""
    if image.pixels.ndim != 2:
        raise CorpusError("artistic augmentation expects grayscale input")
    from scipy import ndimage

    mask = image.pixels > 0.5
    h, w = mask.shape
    out = np.empty((h, w, 3), dtype=np.float32)
    out[:] = np.asarray(effect.bg_color, dtype=np.float32)
    dy, dx = effect.shadow_offset
    if (dy, dx) != (0, 0):
        shadow = _shift_mask(mask, int(dy), int(dx)) & ~mask
        out[shadow] = np.asarray(effect.shadow_color, dtype=np.float32)
    if effect.outline_width > 0:
        ring = ndimage.binary_dilation(mask, iterations=int(effect.outline_width)) & ~mask
        out[ring] = np.asarray(effect.outline_color, dtype=np.float32)
    out[mask] = np.asarray(effect.fg_color, dtype=np.float32)
    return GlyphImage(out, image.resolution, image.char_id, image.style_id)


# ---------------------------------------------------------------------------
# corpus assembly
# ---------------------------------------------------------------------------


@dataclass
class CorpusConfig:
    n_components: int = 48
    n_strokes: int = 8
    n_chars: int = 200
    n_styles: int = 30
    ref_set_size: int = 40
    max_components: int = 4
    char_test_fraction: float = 0.15
    style_test_fraction: float = 0.2
    seed: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def build_corpus(config: CorpusConfig) -> CorpusManifest:
    """Assemble a manifest with disjoint train/test character and style splits
    and a reference character set, disjoint from both, that covers every
    component used by any train/test character."""
    if config.ref_set_size < 1:
        raise CorpusError("uncovered components: reference set is empty (ref_set_size < 1)")
    capacity = distinct_glyph_count(config.n_components, config.max_components)
    if config.n_chars + config.ref_set_size > capacity:
        raise CorpusError(
            f"requested {config.n_chars}+{config.ref_set_size} glyphs but only "
            f"{capacity} distinct component/layout combinations exist"
        )
    table = build_component_table(config.n_components, config.n_strokes, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    taken: set = set()
    main = _sample_glyph_specs(rng, table, config.n_chars, config.max_components, 0, taken)
    used_components = sorted({cid for spec in main for cid, _ in spec.components})
    ref = _cover_glyph_specs(
        rng, table, used_components, config.ref_set_size, config.max_components,
        config.n_chars, taken,
    )
    n_test = max(1, int(round(config.n_chars * config.char_test_fraction)))
    perm = rng.permutation(config.n_chars)
    test_chars = tuple(int(i) for i in sorted(perm[:n_test]))
    train_chars = tuple(int(i) for i in sorted(perm[n_test:]))
    styles = _sample_styles(np.random.default_rng([config.seed, 2]), config.n_styles)
    n_style_test = max(1, int(round(config.n_styles * config.style_test_fraction)))
    sperm = np.random.default_rng([config.seed, 3]).permutation(config.n_styles)
    test_styles = tuple(int(i) for i in sorted(sperm[:n_style_test]))
    train_styles = tuple(int(i) for i in sorted(sperm[n_style_test:]))
    glyphs = {s.char_id: s for s in main + ref}
    manifest = CorpusManifest(
        table=table,
        glyphs=glyphs,
        styles={s.style_id: s for s in styles},
        train_chars=train_chars,
        test_chars=test_chars,
        ref_chars=tuple(s.char_id for s in ref),
        train_styles=train_styles,
        test_styles=test_styles,
        config=config.as_dict(),
    )
    missing = uncovered_components(manifest)
    if missing:
        raise CorpusError(f"uncovered components: {missing}")
    return manifest


def uncovered_components(manifest: CorpusManifest) -> list:
    """Components used by train/test characters but present in no reference
    character."""
    ref_comps = set()
    for cid in manifest.ref_chars:
        ref_comps.update(c for c, _ in manifest.glyphs[cid].components)
    used = set()
    for cid in list(manifest.train_chars) + list(manifest.test_chars):
        used.update(c for c, _ in manifest.glyphs[cid].components)
    return sorted(used - ref_comps)


# ---------------------------------------------------------------------------
# manifest serialization and the real-corpus import path
# ---------------------------------------------------------------------------


def manifest_to_json(manifest: CorpusManifest) -> str:
    d = {
        "config": manifest.config,
        "table": {
            "M": manifest.table.M,
            "N": manifest.table.N,
            "seed": manifest.table.seed,
            "components": [
                {
                    "id": c.id,
                    "stroke_ids": list(c.stroke_ids),
                    "geometry": [
                        {"stroke_id": s.stroke_id, "points": [list(p) for p in s.points]}
                        for s in c.geometry
                    ],
                }
                for c in manifest.table.components
            ],
        },
        "glyphs": {
            str(cid): [[int(comp), list(slot)] for comp, slot in spec.components]
            for cid, spec in manifest.glyphs.items()
        },
        "styles": {str(sid): asdict(s) for sid, s in manifest.styles.items()},
        "splits": {
            "train_chars": list(manifest.train_chars),
            "test_chars": list(manifest.test_chars),
            "ref_chars": list(manifest.ref_chars),
            "train_styles": list(manifest.train_styles),
            "test_styles": list(manifest.test_styles),
        },
    }
    return json.dumps(d)


def manifest_from_json(text: str) -> CorpusManifest:
    d = json.loads(text)
    td = d["table"]
    comps = tuple(
        ComponentPrimitive(
            id=c["id"],
            stroke_ids=tuple(c["stroke_ids"]),
            geometry=tuple(
                Segment(stroke_id=s["stroke_id"], points=tuple(map(tuple, s["points"])))
                for s in c["geometry"]
            ),
        )
        for c in td["components"]
    )
    table = ComponentTable(M=td["M"], N=td["N"], seed=td["seed"], components=comps)
    glyphs = {
        int(cid): GlyphSpec(
            char_id=int(cid),
            components=tuple((int(comp), tuple(slot)) for comp, slot in entries),
        )
        for cid, entries in d["glyphs"].items()
    }
    styles = {
        int(sid): StyleParams(
            style_id=int(sd["style_id"]),
            stroke_width=sd["stroke_width"],
            slant=sd["slant"],
            scale=sd["scale"],
            aspect=sd["aspect"],
            jitter_seed=sd["jitter_seed"],
            serif_flag=bool(sd["serif_flag"]),
            jitter_amp=float(sd.get("jitter_amp", JITTER_AMP)),
            taper=float(sd.get("taper", 0.0)),
        )
        for sid, sd in d["styles"].items()
    }
    sp = d["splits"]
    return CorpusManifest(
        table=table,
        glyphs=glyphs,
        styles=styles,
        train_chars=tuple(sp["train_chars"]),
        test_chars=tuple(sp["test_chars"]),
        ref_chars=tuple(sp["ref_chars"]),
        train_styles=tuple(sp["train_styles"]),
        test_styles=tuple(sp["test_styles"]),
        config=d.get("config", {}),
    )


def load_real_corpus(directory: str | Path):
    """Import a user-supplied glyph corpus: PNGs named <charid>_<styleid>.png
    (dark ink on light background) plus decomposition.json mapping char_id to
    [{component_id, stroke_ids, slot}]. Returns (images, decomp_table) where
    images maps (char_id, style_id) to GlyphImage in the internal convention."""
    from .io import load_png

    directory = Path(directory)
    decomp_path = directory / "decomposition.json"
    if not decomp_path.exists():
        raise CorpusError(f"missing decomposition table {decomp_path}")
    decomp_raw = json.loads(decomp_path.read_text())
    decomp = {}
    for cid, entries in decomp_raw.items():
        decomp[int(cid)] = [
            {
                "component_id": int(e["component_id"]),
                "stroke_ids": [int(s) for s in e["stroke_ids"]],
                "slot": list(e.get("slot", (0.0, 0.0, 1.0, 1.0))),
            }
            for e in entries
        ]
    images = {}
    for png in sorted(directory.glob("*.png")):
        stem = png.stem
        try:
            cid_s, sid_s = stem.split("_")
            cid, sid = int(cid_s), int(sid_s)
        except ValueError:
            raise CorpusError(f"glyph file {png.name} is not named <charid>_<styleid>.png")
        if cid not in decomp:
            raise CorpusError(f"{png.name}: char {cid} missing from decomposition table")
        images[(cid, sid)] = load_png(png, char_id=cid, style_id=sid)
    if not images:
        raise CorpusError(f"no glyph PNGs found in {directory}")
    return images, decomp
