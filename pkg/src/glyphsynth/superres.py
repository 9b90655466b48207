"""Cascaded style-guided super-resolution stages.

Each stage is the same conditional denoiser as stage A with three changes:
the low-resolution input replaces the content reference (and is additionally
channel-concatenated with the noisy latent at the latent grid), the
conditioning encoders carry extra downsampling so token counts match the
low-resolution model, and a noise-level embedding receives the augmentation
level s used to corrupt the low-resolution conditioning.

Stages diffuse over an exactly invertible space-to-depth latent of the target
resolution by default, so the only reconstruction error is the model's own.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import Codec, CodecConfig, make_codec, noise_augment
from .conditioning import ConditionerConfig, dropout_patterns
from .data import RenderCache
from .denoiser import (
    DenoiserConfig,
    DenoiserError,
    GlyphDenoiser,
    RunLogger,
    TrainConfig,
    sample,
)
from .mapping import ReferenceMappings, SelectionPolicy, select_references
from .nn import Tensor, autodiff as ad
from .nn.optim import EMA, Adam
from .schedule import NoiseSchedule, TimestepPlan


class SRError(RuntimeError):
    pass


def bilinear_upsample(images: np.ndarray, out_hw: int) -> np.ndarray:
    """Plain (non-differentiable) separable bilinear resize of (B,H,W)."""
    b, h, w = images.shape
    mr = ad.bilinear_matrix(h, out_hw, np.float32)
    mc = ad.bilinear_matrix(w, out_hw, np.float32)
    return np.einsum("ih,bhw,jw->bij", mr, images.astype(np.float32), mc, optimize=True)


@dataclass
class SRStageConfig:
    source_resolution: int = 32
    target_resolution: int = 128
    latent_f: int = 4
    widths: tuple = (16, 40, 64)
    s_max_fraction: float = 0.25
    inference_s_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.target_resolution <= self.source_resolution:
            raise SRError("target resolution must exceed the source resolution")
        if self.target_resolution % self.source_resolution:
            raise SRError("target must be an integer multiple of the source")


class SRStage:
    """One super-resolution stage: model + target-space codec + the codec used
    for noise conditioning augmentation of the low-res input."""

    def __init__(self, config: SRStageConfig, nca_codec: Codec | None = None):
        self.config = config
        self.codec = make_codec(CodecConfig(kind="space_to_depth", f=config.latent_f))
        self.nca_codec = nca_codec or make_codec(CodecConfig(kind="identity"))
        latent_hw = config.target_resolution // config.latent_f
        extra_down = {32: 0, 64: 1, 128: 2, 256: 3, 512: 4, 1024: 5}.get(config.target_resolution)
        if extra_down is None:
            raise SRError(f"unsupported target resolution {config.target_resolution}")
        self.model = GlyphDenoiser(
            DenoiserConfig(
                latent_hw=latent_hw,
                latent_channels=config.latent_f**2,
                extra_in_channels=1,
                widths=config.widths,
                with_noise_level_embedding=True,
                seed=config.seed,
            ),
            ConditionerConfig(resolution=config.target_resolution,
                              extra_downsamples=extra_down, seed=config.seed),
        )

    def s_max(self, schedule: NoiseSchedule) -> int:
        return int(self.config.s_max_fraction * schedule.T)

    def fit_standardization(self, images_hi: np.ndarray):
        self.codec.fit_standardization(images_hi)

    # -- conditioning assembly -------------------------------------------------

    def _conditioning(self, low_aug: np.ndarray):
        """(content-encoder input, latent-concat channel) from the augmented
        low-res batch: upsampled to target resolution for the encoder, resized
        to the latent grid for the channel concat."""
        cfg = self.config
        content = bilinear_upsample(low_aug, cfg.target_resolution)[..., None]
        latent_hw = cfg.target_resolution // cfg.latent_f
        if low_aug.shape[1] == latent_hw:
            extra = low_aug[..., None].astype(np.float32)
        else:
            extra = bilinear_upsample(low_aug, latent_hw)[..., None]
        return content, extra

    def init_from_stage_a(self, stage_a_state: dict) -> tuple:
        """Copy every stage-A parameter whose name exists here; shared names
        must shape-match (shape errors raise). Returns (copied, fresh)."""
        own = self.model.param_dict()
        copied = []
        for name, value in stage_a_state.items():
            if name not in own:
                continue
            if own[name].data.shape != value.shape:
                raise SRError(
                    f"shared parameter {name!r} has shape {own[name].data.shape} here "
                    f"but {value.shape} in the stage-A checkpoint"
                )
            own[name].data = value.astype(own[name].data.dtype, copy=True)
            copied.append(name)
        fresh = sorted(set(own) - set(copied))
        return copied, fresh


def train_sr_step(stage: SRStage, opt: Adam, ema: EMA, low: np.ndarray,
                  high: np.ndarray, styles_hi: np.ndarray, schedule: NoiseSchedule,
                  rng: np.random.Generator, with_dropout: bool = True) -> float:
    """One optimization step: noise-augment the low-res input at a sampled
    level s, condition on it (encoder + latent concat + s embedding), and
    regress the added noise at a uniform t."""
    b = low.shape[0]
    if high.shape[1] != stage.config.target_resolution:
        raise SRError(f"high-res batch at {high.shape[1]}, expected {stage.config.target_resolution}")
    if low.shape[1] != stage.config.source_resolution:
        raise SRError(f"low-res batch at {low.shape[1]}, expected {stage.config.source_resolution}")
    s_max = stage.s_max(schedule)
    s_arr = rng.integers(0, s_max + 1, size=b)
    low_aug = np.stack([
        noise_augment(low[i], int(s_arr[i]), stage.nca_codec, schedule, rng, s_max=s_max)
        for i in range(b)
    ])
    content, extra = stage._conditioning(low_aug)
    styles5 = styles_hi[..., None].astype(np.float32)
    if with_dropout:
        codes = dropout_patterns(b, rng)
        drop_c = (codes == 1) | (codes == 3)
        drop_s = (codes == 2) | (codes == 3)
        content = content * ~drop_c[:, None, None, None]
        extra = extra * ~drop_c[:, None, None, None]
        styles5 = styles5 * ~drop_s[:, None, None, None, None]
    z0 = stage.codec.encode_std(high)
    t = rng.integers(1, schedule.T + 1, size=b)
    eps = rng.standard_normal(z0.shape).astype(np.float32)
    a = schedule.alpha[t].astype(np.float32).reshape(b, 1, 1, 1)
    sg = schedule.sigma[t].astype(np.float32).reshape(b, 1, 1, 1)
    z_t = a * z0 + sg * eps
    pred = stage.model.epsilon(Tensor(z_t), t, Tensor(content), Tensor(styles5),
                               s=s_arr, extra=Tensor(extra))
    err = ad.sub(pred, Tensor(eps))
    loss = ad.tmean(ad.mul(err, err))
    lv = float(loss.data)
    if not np.isfinite(lv):
        raise DenoiserError(f"SR training loss is not finite ({lv})")
    stage.model.zero_grad()
    loss.backward()
    opt.step()
    ema.update(stage.model.param_dict())
    return lv


def upscale(stage: SRStage, low: np.ndarray, style_refs_hi: np.ndarray,
            plan: TimestepPlan, schedule: NoiseSchedule, rng: np.random.Generator,
            s: int | None = None, s_c: float = 2.0, s_s: float = 2.0) -> np.ndarray:
    """Guided sampling at the target resolution conditioned on the low-res
    batch (noise-augmented at a small level s) and high-res style references.
    low: (B, source, source); style_refs_hi: (B, k, target, target)."""
    b = low.shape[0]
    s_max = stage.s_max(schedule)
    if s is None:
        s = int(stage.config.inference_s_fraction * s_max)
    if not (0 <= s <= s_max):
        raise SRError(f"augmentation level {s} outside [0, {s_max}]")
    if s == 0:
        low_aug = np.stack([noise_augment(low[i], 0, stage.nca_codec, schedule, s_max=s_max)
                            for i in range(b)])
    else:
        low_aug = np.stack([noise_augment(low[i], s, stage.nca_codec, schedule, rng, s_max=s_max)
                            for i in range(b)])
    content, extra = stage._conditioning(low_aug)
    from .conditioning import ConditionBundle

    bundles = [
        ConditionBundle(content=content[i, :, :, 0], styles=style_refs_hi[i])
        for i in range(b)
    ]
    s_arr = np.full(b, s, dtype=np.int64)
    return sample(stage.model, bundles, plan, schedule, stage.codec, rng,
                  s_c=s_c, s_s=s_s, s=s_arr, extra=extra)


def cascade(stages: list, low: np.ndarray, style_refs_per_stage: list,
            plan: TimestepPlan, schedule: NoiseSchedule, rng: np.random.Generator,
            s_c: float = 2.0, s_s: float = 2.0) -> np.ndarray:
    """Sequential application of upscale; each stage's input resolution must
    equal the previous stage's output resolution."""
    if len(stages) != len(style_refs_per_stage):
        raise SRError("one style-reference set per stage required")
    current = low
    for stage, refs in zip(stages, style_refs_per_stage):
        if current.shape[1] != stage.config.source_resolution:
            raise SRError(
                f"cascade mismatch: stage expects {stage.config.source_resolution}, "
                f"got {current.shape[1]}"
            )
        current = upscale(stage, current, refs, plan, schedule, rng, s_c=s_c, s_s=s_s)
    return current


@dataclass
class SRTrainConfig:
    steps: int = 4000
    batch_size: int = 8
    lr: float = 2e-4
    ema_decay: float = 0.999
    seed: int = 0
    log_every: int = 200


class SRBatchBuilder:
    """(low, high, hi-res style references) triples for one (char, style)
    sample; references are chosen with the same mapping machinery as stage A."""

    def __init__(self, manifest, cache: RenderCache, mappings: ReferenceMappings,
                 policy: SelectionPolicy, stage: SRStage, config: SRTrainConfig):
        self.manifest = manifest
        self.cache = cache
        self.mappings = mappings
        self.policy = policy
        self.stage = stage
        self.config = config

    def build(self, rng: np.random.Generator):
        man = self.manifest
        cfg = self.config
        lo_res = self.stage.config.source_resolution
        hi_res = self.stage.config.target_resolution
        chars = [int(c) for c in rng.choice(man.train_chars, size=cfg.batch_size)]
        styles = [int(s) for s in rng.choice(man.train_styles, size=cfg.batch_size)]
        lows, highs, refs_hi = [], [], []
        for cid, sid in zip(chars, styles):
            lows.append(self.cache.glyph(cid, sid, lo_res))
            highs.append(self.cache.glyph(cid, sid, hi_res))
            refs = select_references(cid, self.mappings, self.policy, "normal", rng)
            refs_hi.append(np.stack([self.cache.glyph(r, sid, hi_res) for r in refs]))
        return (np.stack(lows), np.stack(highs), np.stack(refs_hi),
                np.asarray(chars), np.asarray(styles))


def train_sr(stage: SRStage, builder: SRBatchBuilder, schedule: NoiseSchedule,
             config: SRTrainConfig, log_path: Path | None = None, progress=None):
    rng = np.random.default_rng([config.seed, 53])
    opt = Adam(stage.model.params(), lr=config.lr)
    ema = EMA(stage.model.param_dict(), decay=config.ema_decay)
    logger = RunLogger(log_path)
    history = []
    t0 = time.time()
    for step in range(config.steps):
        low, high, refs_hi, _, _ = builder.build(rng)
        loss = train_sr_step(stage, opt, ema, low, high, refs_hi, schedule, rng)
        if step % config.log_every == 0 or step == config.steps - 1:
            rec = {"step": step, "loss": loss, "wall_time": time.time() - t0}
            history.append(rec)
            logger(rec)
            if progress:
                progress(rec)
    return ema, history
