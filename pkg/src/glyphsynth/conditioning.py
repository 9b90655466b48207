"""Component-aware conditioning: content/style encoders, multi-head
cross-attention from content positions onto concatenated style tokens, and
classifier-free condition dropout.

Null conditions are all-zero images (carried with explicit flags so dropout
composes). The attention reduction over the k style references is
order-canonical (sort-then-sum), which makes the module's output bit-exact
invariant under permutation of the reference list; no positional information
is attached to the reference axis on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Conv2d, GroupNorm, Linear, Module, Tensor, autodiff as ad


class ConditioningError(ValueError):
    pass


@dataclass
class ConditionBundle:
    """Content reference and k style references for one target glyph.
    Arrays follow the corpus convention (H, W) in [0, 1]."""

    content: np.ndarray
    styles: np.ndarray  # (k, H, W)
    content_null: bool = False
    style_null: bool = False

    @staticmethod
    def null_like(k: int, resolution: int) -> "ConditionBundle":
        return ConditionBundle(
            content=np.zeros((resolution, resolution), np.float32),
            styles=np.zeros((k, resolution, resolution), np.float32),
            content_null=True,
            style_null=True,
        )

    def effective_content(self) -> np.ndarray:
        return np.zeros_like(self.content) if self.content_null else self.content

    def effective_styles(self) -> np.ndarray:
        return np.zeros_like(self.styles) if self.style_null else self.styles


@dataclass
class ConditioningFeature:
    tokens: np.ndarray  # (h_c, w_c, d)

    def __post_init__(self):
        if not np.all(np.isfinite(self.tokens)):
            raise ConditioningError("conditioning feature contains non-finite values")


@dataclass
class ConditionerConfig:
    resolution: int = 32
    k: int = 6
    d_c: int = 48  # content token dimension
    d_s: int = 48  # style token dimension
    d: int = 64  # conditioning feature dimension (= heads * head_dim)
    heads: int = 4
    enc_width: int = 16
    extra_downsamples: int = 0  # SR-resolution variants add downsampling here
    seed: int = 0

    @property
    def head_dim(self) -> int:
        if self.d % self.heads:
            raise ConditioningError("d must be divisible by heads")
        return self.d // self.heads

    @property
    def token_hw(self) -> int:
        return self.resolution // (4 * 2**self.extra_downsamples)


def component_attention(q: Tensor, keys: Tensor, vals: Tensor, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention of content tokens onto style
    tokens grouped by reference: q (B, Q, d), keys/vals (B, k, S, d) ->
    (B, Q, d). Scaling is 1/sqrt(per-head dim); reductions over the reference
    axis are sort-canonical, so the output is bit-exact under any permutation
    of the k references."""
    b, qn, d = q.shape
    _, k, sn, _ = keys.shape
    if d % heads:
        raise ConditioningError("token dimension must be divisible by heads")
    hd = d // heads
    qh = ad.transpose(ad.reshape(q, (b, 1, qn, heads, hd)), (0, 1, 3, 2, 4))
    kh = ad.transpose(ad.reshape(keys, (b, k, sn, heads, hd)), (0, 1, 3, 2, 4))
    vh = ad.transpose(ad.reshape(vals, (b, k, sn, heads, hd)), (0, 1, 3, 2, 4))
    logits = ad.mul(ad.matmul(qh, ad.transpose(kh, (0, 1, 2, 4, 3))), 1.0 / np.sqrt(hd))
    # (B, k, heads, Q, S); stable softmax with a detached global max
    m = logits.data.max(axis=(1, 4), keepdims=True)
    e = ad.exp(ad.sub(logits, Tensor(m)))
    per_ref_norm = ad.tsum(e, axis=4)  # (B, k, heads, Q), in-reference order fixed
    z = ad.sorted_sum(per_ref_norm, axis=1)  # (B, heads, Q)
    per_ref_num = ad.matmul(e, vh)  # (B, k, heads, Q, hd)
    num = ad.sorted_sum(per_ref_num, axis=1)  # (B, heads, Q, hd)
    out = ad.div(num, ad.reshape(z, (b, heads, qn, 1)))
    out = ad.transpose(out, (0, 2, 1, 3))  # (B, Q, heads, hd)
    return ad.reshape(out, (b, qn, heads * hd))


class GlyphEncoder(Module):
    """Small conv stack: two stride-2 stages (plus any extra ones) down to the
    token grid."""

    def __init__(self, width, d_out, extra_downsamples, rng):
        super().__init__()
        self.stages = []
        c_in, c_out = 1, width
        for i in range(2 + extra_downsamples):
            conv = self.add_module(f"down{i}", Conv2d(c_in, c_out, stride=2, rng=rng))
            norm = self.add_module(f"norm{i}", GroupNorm(c_out))
            self.stages.append((conv, norm))
            c_in, c_out = c_out, min(2 * c_out, d_out)
        # deeper stacks widen the head input; a distinct name keeps checkpoint
        # names shape-consistent across resolutions
        head_name = "head" if extra_downsamples == 0 else "head_deep"
        self.head = self.add_module(head_name, Conv2d(c_in, d_out, rng=rng))

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for conv, norm in self.stages:
            h = ad.silu(norm(conv(h)))
        return self.head(h)


class Conditioner(Module):
    def __init__(self, config: ConditionerConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.content_enc = self.add_module(
            "content_enc", GlyphEncoder(config.enc_width, config.d_c, config.extra_downsamples, rng)
        )
        self.style_enc = self.add_module(
            "style_enc", GlyphEncoder(config.enc_width, config.d_s, config.extra_downsamples, rng)
        )
        self.w_q = self.add_module("w_q", Linear(config.d_c, config.d, rng=rng))
        self.w_k = self.add_module("w_k", Linear(config.d_s, config.d, rng=rng))
        self.w_v = self.add_module("w_v", Linear(config.d_s, config.d, rng=rng))

    # -- batched forward (training path) -------------------------------------

    def __call__(self, content: Tensor, styles: Tensor) -> Tensor:
        """content: (B, H, W, 1); styles: (B, k, H, W, 1) ->
        conditioning feature (B, h_c, w_c, d)."""
        cfg = self.config
        b = content.shape[0]
        k = styles.shape[1]
        f_c = self.content_enc(content)  # (B, hc, wc, d_c)
        hc, wc = f_c.shape[1], f_c.shape[2]
        styles_flat = ad.reshape(styles, (b * k,) + tuple(styles.shape[2:]))
        f_s = self.style_enc(styles_flat)  # (B*k, hs, ws, d_s)
        hs, ws = f_s.shape[1], f_s.shape[2]

        q = self.w_q(ad.reshape(f_c, (b, hc * wc, cfg.d_c)))  # (B, Q, d)
        kv_in = ad.reshape(f_s, (b, k, hs * ws, cfg.d_s))
        keys = self.w_k(kv_in)  # (B, k, S, d)
        vals = self.w_v(kv_in)
        out = component_attention(q, keys, vals, cfg.heads)
        return ad.reshape(out, (b, hc, wc, cfg.d))

    # -- single-bundle API ----------------------------------------------------

    def _bundle_arrays(self, bundle: ConditionBundle):
        cfg = self.config
        content = np.asarray(bundle.effective_content(), np.float32)
        styles = np.asarray(bundle.effective_styles(), np.float32)
        if content.shape != (cfg.resolution, cfg.resolution):
            raise ConditioningError(
                f"content resolution {content.shape} != configured {cfg.resolution}"
            )
        if styles.shape != (cfg.k, cfg.resolution, cfg.resolution):
            raise ConditioningError(
                f"styles shape {styles.shape} != (k={cfg.k}, {cfg.resolution}, {cfg.resolution})"
            )
        return content[None, :, :, None], styles[None, :, :, :, None]

    def encode_condition(self, bundle: ConditionBundle) -> ConditioningFeature:
        content, styles = self._bundle_arrays(bundle)
        with ad.no_grad():
            out = self(Tensor(content), Tensor(styles))
        return ConditioningFeature(tokens=out.data[0])

    def attention_map(self, bundle: ConditionBundle, head: int, query_position: int) -> np.ndarray:
        """Diagnostic: softmax weights of one head and one content position
        over all k*h_s*w_s style tokens."""
        cfg = self.config
        if not (0 <= head < cfg.heads):
            raise ConditioningError(f"head {head} outside [0, {cfg.heads})")
        content, styles = self._bundle_arrays(bundle)
        b, k = 1, cfg.k
        with ad.no_grad():
            f_c = self.content_enc(Tensor(content)).data
        hc, wc = f_c.shape[1], f_c.shape[2]
        qn = hc * wc
        if not (0 <= query_position < qn):
            raise ConditioningError(f"query position {query_position} outside [0, {qn})")
        with ad.no_grad():
            f_s = self.style_enc(Tensor(styles.reshape((k,) + styles.shape[2:]))).data
        sn = f_s.shape[1] * f_s.shape[2]
        q = f_c.reshape(qn, cfg.d_c) @ self.w_q.w.data + self.w_q.b.data
        keys = f_s.reshape(k * sn, cfg.d_s) @ self.w_k.w.data + self.w_k.b.data
        hd = cfg.head_dim
        qh = q.reshape(qn, cfg.heads, hd)[query_position, head]
        kh = keys.reshape(k * sn, cfg.heads, hd)[:, head]
        logits = kh @ qh / np.sqrt(hd)
        e = np.exp(logits - logits.max())
        return e / e.sum()


# ---------------------------------------------------------------------------
# classifier-free condition dropout
# ---------------------------------------------------------------------------

DROP_NONE, DROP_CONTENT, DROP_STYLE, DROP_BOTH = 0, 1, 2, 3


def dropout_patterns(n: int, rng: np.random.Generator,
                     p_content: float = 0.05, p_style: float = 0.05,
                     p_both: float = 0.05) -> np.ndarray:
    """Vectorized null-pattern codes for n bundles: content-only, style-only,
    and both nulled each with their own probability, else unchanged."""
    u = rng.random(n)
    out = np.full(n, DROP_NONE, dtype=np.int64)
    out[u < p_content] = DROP_CONTENT
    out[(u >= p_content) & (u < p_content + p_style)] = DROP_STYLE
    out[(u >= p_content + p_style) & (u < p_content + p_style + p_both)] = DROP_BOTH
    return out


def dropout_conditions(bundle: ConditionBundle, rng: np.random.Generator,
                       p_content: float = 0.05, p_style: float = 0.05,
                       p_both: float = 0.05) -> ConditionBundle:
    """Training-time condition dropout for one bundle."""
    code = int(dropout_patterns(1, rng, p_content, p_style, p_both)[0])
    return apply_dropout_code(bundle, code)


def apply_dropout_code(bundle: ConditionBundle, code: int) -> ConditionBundle:
    drop_c = code in (DROP_CONTENT, DROP_BOTH) or bundle.content_null
    drop_s = code in (DROP_STYLE, DROP_BOTH) or bundle.style_null
    return ConditionBundle(
        content=np.zeros_like(bundle.content) if drop_c else bundle.content,
        styles=np.zeros_like(bundle.styles) if drop_s else bundle.styles,
        content_null=drop_c,
        style_null=drop_s,
    )
