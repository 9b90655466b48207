"""The noise-prediction network (a small conditional UNet), its training
loop, classifier-free guided estimation, and the full sampling loop.

The conditioning feature enters twice: a 1x1-projected copy is bilinearly
resized to the latent grid and channel-concatenated with the noisy latent at
the UNet input, and the raw token grid serves as key/value memory for one
cross-attention block at the lowest UNet resolution.

Guided estimation uses the affine regrouping
(1-s_c)*eps(null,null) + (s_c-s_s)*eps(content,null) + s_s*eps(content,styles),
algebraically equal to the telescoped two-stage guidance but exact in
floating point at the degenerate scales (0,0) and (1,1).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import Codec
from .conditioning import (
    ConditionBundle,
    Conditioner,
    ConditionerConfig,
    apply_dropout_code,
    dropout_patterns,
)
from .corpus import AUGMENT_KINDS, GlyphImage, augment
from .data import RenderCache
from .mapping import ReferenceMappings, SelectionPolicy, select_references
from .nn import Conv2d, GroupNorm, Linear, Module, Tensor, autodiff as ad, timestep_embedding
from .nn.optim import EMA, Adam
from .schedule import NoiseSchedule, TimestepPlan, ddpm_step


class DenoiserError(RuntimeError):
    pass


@dataclass
class DenoiserConfig:
    latent_hw: int = 32
    latent_channels: int = 1
    extra_in_channels: int = 0  # SR stages concatenate low-res conditioning here
    widths: tuple = (16, 40, 64)
    temb_dim: int = 128
    cond_dim: int = 64
    cond_proj_channels: int = 8
    cond_hw: int = 8
    with_noise_level_embedding: bool = False
    seed: int = 0


class ResBlock(Module):
    def __init__(self, c_in, c_out, temb_dim, rng):
        super().__init__()
        self.n1 = self.add_module("n1", GroupNorm(c_in))
        self.c1 = self.add_module("c1", Conv2d(c_in, c_out, rng=rng))
        self.temb = self.add_module("temb", Linear(temb_dim, c_out, rng=rng))
        self.n2 = self.add_module("n2", GroupNorm(c_out))
        self.c2 = self.add_module("c2", Conv2d(c_out, c_out, rng=rng))
        self.skip = None
        if c_in != c_out:
            self.skip = self.add_module("skip", Conv2d(c_in, c_out, k=1, pad=0, rng=rng))

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.c1(ad.silu(self.n1(x)))
        t = ad.reshape(self.temb(ad.silu(temb)), (temb.shape[0], 1, 1, h.shape[3]))
        h = ad.add(h, t)
        h = self.c2(ad.silu(self.n2(h)))
        sk = x if self.skip is None else self.skip(x)
        return ad.add(sk, h)


class CrossAttnBlock(Module):
    """Latent tokens attend to the conditioning token grid."""

    def __init__(self, channels, cond_dim, heads, rng):
        super().__init__()
        self.heads = heads
        self.norm = self.add_module("norm", GroupNorm(channels))
        self.q = self.add_module("q", Linear(channels, channels, rng=rng))
        self.k = self.add_module("k", Linear(cond_dim, channels, rng=rng))
        self.v = self.add_module("v", Linear(cond_dim, channels, rng=rng))
        self.proj = self.add_module("proj", Linear(channels, channels, rng=rng, zero_init=True))

    def __call__(self, x: Tensor, cond_tokens: Tensor) -> Tensor:
        b, h, w, c = x.shape
        qn = h * w
        hd = c // self.heads
        q = self.q(ad.reshape(self.norm(x), (b, qn, c)))
        keys = self.k(cond_tokens)  # (B, S, c)
        vals = self.v(cond_tokens)
        sn = keys.shape[1]
        qh = ad.transpose(ad.reshape(q, (b, qn, self.heads, hd)), (0, 2, 1, 3))
        kh = ad.transpose(ad.reshape(keys, (b, sn, self.heads, hd)), (0, 2, 1, 3))
        vh = ad.transpose(ad.reshape(vals, (b, sn, self.heads, hd)), (0, 2, 1, 3))
        logits = ad.mul(ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
        m = logits.data.max(axis=3, keepdims=True)
        e = ad.exp(ad.sub(logits, Tensor(m)))
        z = ad.tsum(e, axis=3, keepdims=True)
        att = ad.matmul(ad.div(e, z), vh)  # (B, heads, Q, hd)
        att = ad.reshape(ad.transpose(att, (0, 2, 1, 3)), (b, qn, c))
        return ad.add(x, ad.reshape(self.proj(att), (b, h, w, c)))


class UNet(Module):
    """3-level UNet over the latent grid with skip connections, sinusoidal
    timestep embedding, an optional noise-level embedding, and one
    cross-attention block at the lowest resolution. The full-resolution level
    is deliberately light (one conv in, one fuse conv out); residual blocks
    live at the half and quarter grids."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng([config.seed, 11])
        w0, w1, w2 = config.widths
        td = config.temb_dim
        c_in = config.latent_channels + config.cond_proj_channels + config.extra_in_channels
        self.temb1 = self.add_module("temb1", Linear(td, td, rng=rng))
        self.temb2 = self.add_module("temb2", Linear(td, td, rng=rng))
        self.cond_proj = self.add_module(
            "cond_proj", Conv2d(config.cond_dim, config.cond_proj_channels, k=1, pad=0, rng=rng)
        )
        name = "conv_in" if config.extra_in_channels == 0 else "conv_in_sr"
        self.conv_in = self.add_module(name, Conv2d(c_in, w0, rng=rng))
        self.pool0 = self.add_module("pool0", Conv2d(w0, w1, stride=2, rng=rng))
        self.down1 = self.add_module("down1", ResBlock(w1, w1, td, rng))
        self.pool1 = self.add_module("pool1", Conv2d(w1, w2, stride=2, rng=rng))
        self.mid1 = self.add_module("mid1", ResBlock(w2, w2, td, rng))
        self.attn = self.add_module("attn", CrossAttnBlock(w2, config.cond_dim, 4, rng))
        self.mid2 = self.add_module("mid2", ResBlock(w2, w2, td, rng))
        self.up1c = self.add_module("up1c", Conv2d(w2, w1, rng=rng))
        self.up1 = self.add_module("up1", ResBlock(2 * w1, w1, td, rng))
        self.up0c = self.add_module("up0c", Conv2d(w1, w0, rng=rng))
        self.fuse0 = self.add_module("fuse0", Conv2d(2 * w0, w0, rng=rng))
        self.out_norm = self.add_module("out_norm", GroupNorm(w0))
        out_name = "out" if config.extra_in_channels == 0 else "out_sr"
        self.out = self.add_module(out_name, Conv2d(w0, config.latent_channels, rng=rng, zero_init=True))

    def __call__(self, z: Tensor, t: np.ndarray, cond_grid: Tensor,
                 s: np.ndarray | None = None, extra: Tensor | None = None) -> Tensor:
        cfg = self.config
        temb_np = timestep_embedding(t, cfg.temb_dim)
        if cfg.with_noise_level_embedding:
            if s is None:
                s = np.zeros_like(np.asarray(t))
            temb_np = temb_np + timestep_embedding(s, cfg.temb_dim)
        elif s is not None:
            raise DenoiserError("model has no noise-level embedding")
        temb = self.temb2(ad.silu(self.temb1(Tensor(temb_np))))
        b = z.shape[0]
        cond_small = self.cond_proj(cond_grid)
        cond_up = ad.resize_bilinear(cond_small, z.shape[1], z.shape[2])
        parts = [z, cond_up] if extra is None else [z, extra, cond_up]
        h0 = self.conv_in(ad.concat(parts, axis=3))
        h1 = self.down1(self.pool0(h0), temb)
        hm = self.mid1(self.pool1(h1), temb)
        cond_tokens = ad.reshape(cond_grid, (b, cfg.cond_hw * cfg.cond_hw, cfg.cond_dim))
        hm = self.attn(hm, cond_tokens)
        hm = self.mid2(hm, temb)
        u1 = self.up1(ad.concat([self.up1c(ad.repeat2x(hm)), h1], axis=3), temb)
        u0 = self.fuse0(ad.concat([self.up0c(ad.repeat2x(u1)), h0], axis=3))
        return self.out(ad.silu(self.out_norm(u0)))


class GlyphDenoiser(Module):
    """Conditioner + UNet: the full noise predictor eps(z_t, t, C(x_c, X_s))."""

    def __init__(self, unet_config: DenoiserConfig, cond_config: ConditionerConfig):
        super().__init__()
        unet_config.cond_hw = cond_config.token_hw  # UNet memory grid tracks the conditioner
        unet_config.cond_dim = cond_config.d
        self.unet_config = unet_config
        self.cond_config = cond_config
        self.conditioner = self.add_module("conditioner", Conditioner(cond_config))
        self.unet = self.add_module("unet", UNet(unet_config))

    def epsilon(self, z: Tensor, t: np.ndarray, content: Tensor, styles: Tensor,
                s: np.ndarray | None = None, extra: Tensor | None = None) -> Tensor:
        cond = self.conditioner(content, styles)
        return self.unet(z, t, cond, s=s, extra=extra)

    def epsilon_np(self, z: np.ndarray, t: np.ndarray, content: np.ndarray,
                   styles: np.ndarray, s: np.ndarray | None = None,
                   extra: np.ndarray | None = None) -> np.ndarray:
        with ad.no_grad():
            return self.epsilon(
                Tensor(z), t, Tensor(content), Tensor(styles),
                s=s, extra=None if extra is None else Tensor(extra),
            ).data


# ---------------------------------------------------------------------------
# classifier-free guidance and sampling
# ---------------------------------------------------------------------------


def bundles_to_arrays(bundles: list) -> tuple:
    content = np.stack([b.effective_content() for b in bundles]).astype(np.float32)[..., None]
    styles = np.stack([b.effective_styles() for b in bundles]).astype(np.float32)[..., None]
    return content, styles


def guided_epsilon(model: GlyphDenoiser, z_t: np.ndarray, t: np.ndarray, bundles: list,
                   s_c: float = 2.0, s_s: float = 2.0,
                   s: np.ndarray | None = None, extra: np.ndarray | None = None,
                   null_extra: bool = True) -> np.ndarray:
    """Two-stage classifier-free guided noise estimate from exactly three
    forward passes (unconditional, content-only, fully conditioned); the three
    passes ride one stacked batch."""
    content, styles = bundles_to_arrays(bundles)
    b = z_t.shape[0]
    zero_c, zero_s = np.zeros_like(content), np.zeros_like(styles)
    content3 = np.concatenate([zero_c, content, content])
    styles3 = np.concatenate([zero_s, zero_s, styles])
    z3 = np.concatenate([z_t, z_t, z_t])
    t3 = np.concatenate([t, t, t])
    s3 = None if s is None else np.concatenate([s, s, s])
    extra3 = None
    if extra is not None:
        extra_null = np.zeros_like(extra) if null_extra else extra
        extra3 = np.concatenate([extra_null, extra, extra])
    out = model.epsilon_np(z3, t3, content3, styles3, s=s3, extra=extra3)
    e_uu, e_cu, e_cs = out[:b], out[b : 2 * b], out[2 * b :]
    return compose_guidance(e_uu, e_cu, e_cs, s_c, s_s)


def compose_guidance(e_uu: np.ndarray, e_cu: np.ndarray, e_cs: np.ndarray,
                     s_c: float, s_s: float) -> np.ndarray:
    """(1-s_c)*e_uu + (s_c-s_s)*e_cu + s_s*e_cs; the telescoped two-stage
    guidance regrouped so the (0,0) and (1,1) identities are float-exact."""
    return (1.0 - s_c) * e_uu + (s_c - s_s) * e_cu + s_s * e_cs


def sample(model: GlyphDenoiser, bundles: list, plan: TimestepPlan,
           schedule: NoiseSchedule, codec: Codec, rng: np.random.Generator,
           s_c: float = 2.0, s_s: float = 2.0,
           s: np.ndarray | None = None, extra: np.ndarray | None = None) -> np.ndarray:
    """Full guided ancestral sampling; returns decoded images (B, H, W)."""
    b = len(bundles)
    lat_hw = model.unet_config.latent_hw
    z = rng.standard_normal((b, lat_hw, lat_hw, model.unet_config.latent_channels)).astype(np.float32)
    steps = list(plan.steps)
    for t, t_prev in zip(steps, steps[1:] + [0]):
        t_arr = np.full(b, t, dtype=np.int64)
        eps = guided_epsilon(model, z, t_arr, bundles, s_c, s_s, s=s, extra=extra)
        z = ddpm_step(z, eps, t, t_prev, schedule, rng).astype(np.float32)
    return codec.decode_std(z)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 12000
    batch_size: int = 16
    lr: float = 2e-4
    ema_decay: float = 0.999
    augment_prob: float = 0.5
    augment_kinds: tuple = AUGMENT_KINDS
    zoom_range: tuple = (0.9, 1.15)
    stretch_range: tuple = (0.9, 1.15)
    italic_range: tuple = (-0.25, 0.25)
    seed: int = 0
    log_every: int = 200

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.lr <= 0 or not (0 < self.ema_decay <= 1):
            raise DenoiserError("training hyperparameters must be positive")


class BatchBuilder:
    """Assembles training batches: target latents plus condition bundles built
    through reference selection, augmentation, and condition dropout.

    One augmentation transform is shared by the target and its style
    references, so augmentations act like synthetic style variants; the
    content reference always shows the unaugmented source-style glyph."""

    def __init__(self, manifest, cache: RenderCache, mappings: ReferenceMappings,
                 policy: SelectionPolicy, codec: Codec, resolution: int,
                 config: TrainConfig):
        self.manifest = manifest
        self.cache = cache
        self.mappings = mappings
        self.policy = policy
        self.codec = codec
        self.resolution = resolution
        self.config = config

    def _sample_augment(self, rng) -> tuple | None:
        cfg = self.config
        if rng.random() >= cfg.augment_prob:
            return None
        kind = cfg.augment_kinds[int(rng.integers(len(cfg.augment_kinds)))]
        if kind == "zoom":
            lo, hi = cfg.zoom_range
        elif kind == "italic":
            lo, hi = cfg.italic_range
        else:
            lo, hi = cfg.stretch_range
        return kind, float(rng.uniform(lo, hi))

    def _augmented(self, pixels: np.ndarray, aug, char_id: int, style_id: int) -> np.ndarray:
        if aug is None:
            return pixels
        img = GlyphImage(pixels, self.resolution, char_id, style_id)
        return augment(img, aug[0], aug[1]).pixels

    def build(self, rng: np.random.Generator, phase: str = "normal",
              with_dropout: bool = True):
        cfg = self.config
        man = self.manifest
        bsz = cfg.batch_size
        chars = [int(c) for c in rng.choice(man.train_chars, size=bsz)]
        styles = [int(s) for s in rng.choice(man.train_styles, size=bsz)]
        codes = dropout_patterns(bsz, rng) if with_dropout else np.zeros(bsz, np.int64)
        targets, bundles = [], []
        for i in range(bsz):
            cid, sid = chars[i], styles[i]
            aug = self._sample_augment(rng)
            target = self._augmented(self.cache.glyph(cid, sid, self.resolution), aug, cid, sid)
            refs = select_references(cid, self.mappings, self.policy, phase, rng)
            ref_imgs = np.stack([
                self._augmented(self.cache.glyph(r, sid, self.resolution), aug, r, sid)
                for r in refs
            ])
            bundle = ConditionBundle(content=self.cache.content(cid, self.resolution),
                                     styles=ref_imgs)
            bundles.append(apply_dropout_code(bundle, int(codes[i])))
            targets.append(target)
        z0 = self.codec.encode_std(np.stack(targets))
        return z0, bundles, np.asarray(chars), np.asarray(styles)


def train_step(model: GlyphDenoiser, opt: Adam, ema: EMA, z0: np.ndarray,
               bundles: list, schedule: NoiseSchedule, rng: np.random.Generator,
               t_override: np.ndarray | None = None) -> float:
    """One optimization step of the noise-prediction loss; returns the loss.
    t is uniform over [1, T] unless overridden (tests pin it)."""
    b = z0.shape[0]
    t = rng.integers(1, schedule.T + 1, size=b) if t_override is None else t_override
    eps = rng.standard_normal(z0.shape).astype(np.float32)
    a = schedule.alpha[t].astype(np.float32).reshape(b, 1, 1, 1)
    sg = schedule.sigma[t].astype(np.float32).reshape(b, 1, 1, 1)
    z_t = a * z0 + sg * eps
    content, styles = bundles_to_arrays(bundles)
    pred = model.epsilon(Tensor(z_t), t, Tensor(content), Tensor(styles))
    err = ad.sub(pred, Tensor(eps))
    loss = ad.tmean(ad.mul(err, err))
    lv = float(loss.data)
    if not np.isfinite(lv):
        raise DenoiserError(f"training loss is not finite ({lv})")
    model.zero_grad()
    loss.backward()
    opt.step()
    ema.update(model.param_dict())
    return lv


@dataclass
class RunLogger:
    path: Path | None

    def __call__(self, record: dict):
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record) + "\n")


def train_denoiser(model: GlyphDenoiser, builder: BatchBuilder,
                   schedule: NoiseSchedule, config: TrainConfig,
                   log_path: Path | None = None, progress=None):
    """Full stage-A training loop with the one-shot reference-replacement
    phase over the last fraction of steps; returns (ema, history)."""
    rng = np.random.default_rng([config.seed, 77])
    opt = Adam(model.params(), lr=config.lr)
    ema = EMA(model.param_dict(), decay=config.ema_decay)
    logger = RunLogger(log_path)
    history = []
    phase_switch = int(config.steps * (1.0 - builder.policy.one_shot_phase_fraction))
    t0 = time.time()
    for step in range(config.steps):
        phase = "one_shot_phase" if step >= phase_switch else "normal"
        z0, bundles, _, _ = builder.build(rng, phase=phase)
        loss = train_step(model, opt, ema, z0, bundles, schedule, rng)
        if step % config.log_every == 0 or step == config.steps - 1:
            rec = {"step": step, "loss": loss, "wall_time": time.time() - t0, "phase": phase}
            history.append(rec)
            logger(rec)
            if progress:
                progress(rec)
    return ema, history


def ema_model(model: GlyphDenoiser, ema: EMA) -> GlyphDenoiser:
    """A copy of the model carrying the EMA weights (used for sampling)."""
    clone = GlyphDenoiser(model.unet_config, model.cond_config)
    clone.load_state_arrays({k: v.copy() for k, v in ema.state_arrays().items()})
    return clone


def model_checkpoint_extra(model: GlyphDenoiser) -> dict:
    from dataclasses import asdict

    uc = asdict(model.unet_config)
    cc = asdict(model.cond_config)
    uc["widths"] = list(uc["widths"])
    return {"unet_config": uc, "cond_config": cc}


def model_from_checkpoint(manifest: dict, state: dict) -> GlyphDenoiser:
    uc = dict(manifest["unet_config"])
    uc["widths"] = tuple(uc["widths"])
    model = GlyphDenoiser(DenoiserConfig(**uc), ConditionerConfig(**manifest["cond_config"]))
    model.load_state_arrays(state)
    return model
