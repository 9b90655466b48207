"""One-step student distilled from the multi-step noise predictor with a
score-distillation objective.

The student copies the teacher's UNet weights, shares (and freezes) the
teacher's conditioning module, and is always evaluated at the terminal
timestep so inference starts from pure noise. Each update draws a fresh
timestep and noise, re-corrupts the student's one-step reconstruction, and
moves it toward the teacher's guided prediction: the parameter update
direction is w(t) * (eps_teacher - eps) * d z_hat / d phi with uniform w,
realized as the gradient of <stop-grad[w(t)(eps_teacher - eps)], z_hat>.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import Codec
from .denoiser import (
    BatchBuilder,
    GlyphDenoiser,
    RunLogger,
    UNet,
    bundles_to_arrays,
    compose_guidance,
)
from .nn import Tensor, autodiff as ad
from .nn.optim import Adam
from .schedule import NoiseSchedule


class DistillError(RuntimeError):
    pass


@dataclass
class DistillConfig:
    steps: int = 1500
    batch_size: int = 16
    lr: float = 2e-5  # 0.1x the stage-A default
    s_c: float = 2.0
    s_s: float = 2.0
    seed: int = 0
    log_every: int = 100


class StudentModel:
    """One-step generator: own UNet weights, aliased frozen conditioning,
    timestep conditioning pinned to the terminal step."""

    def __init__(self, unet: UNet, conditioner, fixed_t: int, unet_config, cond_config):
        self.unet = unet
        self.conditioner = conditioner  # shared with the teacher, never updated
        self.fixed_t = fixed_t
        self.unet_config = unet_config
        self.cond_config = cond_config

    def trainable_params(self):
        return self.unet.params()

    def cond_grid(self, content: np.ndarray, styles: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.conditioner(Tensor(content), Tensor(styles)).data

    def generate_latent(self, z_T: np.ndarray, content: np.ndarray, styles: np.ndarray,
                        schedule: NoiseSchedule, with_grad: bool = False):
        """One forward pass; the clean-latent reconstruction from the terminal
        step's velocity reading: z_hat = alpha_T z - sigma_T out."""
        t = np.full(z_T.shape[0], self.fixed_t, dtype=np.int64)
        cond = Tensor(self.cond_grid(content, styles))
        a_T = float(schedule.alpha[self.fixed_t])
        s_T = float(schedule.sigma[self.fixed_t])
        if with_grad:
            out = self.unet(Tensor(z_T), t, cond)
            return ad.sub(ad.mul(Tensor(z_T), a_T), ad.mul(out, s_T))
        with ad.no_grad():
            out = self.unet(Tensor(z_T), t, cond)
            return a_T * z_T - s_T * out.data


def init_student(teacher: GlyphDenoiser, schedule: NoiseSchedule) -> StudentModel:
    """phi starts as a copy of theta; conditioning weights are aliased to the
    teacher's and flagged frozen by never entering the student optimizer."""
    unet = UNet(teacher.unet_config)
    unet.load_state_arrays({k: v.copy() for k, v in teacher.unet.state_arrays().items()})
    return StudentModel(unet, teacher.conditioner, schedule.T,
                        teacher.unet_config, teacher.cond_config)


def student_generate(student: StudentModel, z_T: np.ndarray, bundles: list,
                     schedule: NoiseSchedule) -> np.ndarray:
    content, styles = bundles_to_arrays(bundles)
    return student.generate_latent(z_T, content, styles, schedule, with_grad=False)


def student_sample(student: StudentModel, bundles: list, schedule: NoiseSchedule,
                   codec: Codec, rng: np.random.Generator) -> np.ndarray:
    """One-step generation: a single denoiser forward plus the decode."""
    b = len(bundles)
    hw = student.unet_config.latent_hw
    z_T = rng.standard_normal((b, hw, hw, student.unet_config.latent_channels)).astype(np.float32)
    return codec.decode_std(student_generate(student, z_T, bundles, schedule))


def sds_surrogate(z_hat: Tensor, teacher_eps: np.ndarray, eps_prime: np.ndarray,
                  weight: float = 1.0) -> Tensor:
    """<stop-grad[w (eps_teacher - eps)], z_hat> / batch; its phi-gradient is
    exactly w (eps_teacher - eps) dz_hat/dphi."""
    direction = weight * (teacher_eps - eps_prime)
    b = z_hat.shape[0]
    return ad.mul(ad.tsum(ad.mul(z_hat, Tensor(direction.astype(z_hat.dtype)))), 1.0 / b)


def sds_update(student: StudentModel, teacher: GlyphDenoiser, opt: Adam,
               z0: np.ndarray, bundles: list, schedule: NoiseSchedule,
               rng: np.random.Generator, s_c: float = 2.0, s_s: float = 2.0) -> float:
    """One score-distillation step; returns the surrogate loss value."""
    b = z0.shape[0]
    content, styles = bundles_to_arrays(bundles)
    eps0 = rng.standard_normal(z0.shape).astype(np.float32)
    a_T, s_T = float(schedule.alpha[schedule.T]), float(schedule.sigma[schedule.T])
    z_T = a_T * z0 + s_T * eps0
    z_hat = student.generate_latent(z_T, content, styles, schedule, with_grad=True)
    t = int(rng.integers(1, schedule.T + 1))
    eps_prime = rng.standard_normal(z0.shape).astype(np.float32)
    a_t, sg_t = float(schedule.alpha[t]), float(schedule.sigma[t])
    z_t = a_t * z_hat.data + sg_t * eps_prime
    t_arr = np.full(b, t, dtype=np.int64)
    teacher_eps = _teacher_guided(teacher, z_t, t_arr, content, styles, s_c, s_s)
    loss = sds_surrogate(z_hat, teacher_eps, eps_prime)
    lv = float(loss.data)
    if not np.isfinite(lv):
        raise DistillError(f"distillation surrogate is not finite ({lv})")
    student.unet.zero_grad()
    loss.backward()
    opt.step()
    return lv


def _teacher_guided(teacher: GlyphDenoiser, z_t, t_arr, content, styles, s_c, s_s):
    b = z_t.shape[0]
    zero_c, zero_s = np.zeros_like(content), np.zeros_like(styles)
    c3 = np.concatenate([zero_c, content, content])
    s3 = np.concatenate([zero_s, zero_s, styles])
    out = teacher.epsilon_np(np.concatenate([z_t] * 3), np.concatenate([t_arr] * 3), c3, s3)
    return compose_guidance(out[:b], out[b : 2 * b], out[2 * b :], s_c, s_s)


def distill(teacher: GlyphDenoiser, builder: BatchBuilder, schedule: NoiseSchedule,
            config: DistillConfig, log_path: Path | None = None, progress=None):
    """Full distillation run; returns (student, history). Teacher and
    conditioning parameters are bit-identical before and after."""
    student = init_student(teacher, schedule)
    opt = Adam(student.trainable_params(), lr=config.lr)
    rng = np.random.default_rng([config.seed, 31])
    logger = RunLogger(log_path)
    history = []
    t0 = time.time()
    for step in range(config.steps):
        z0, bundles, _, _ = builder.build(rng, phase="normal", with_dropout=False)
        loss = sds_update(student, teacher, opt, z0, bundles, schedule, rng,
                          config.s_c, config.s_s)
        if step % config.log_every == 0 or step == config.steps - 1:
            rec = {"step": step, "loss": loss, "wall_time": time.time() - t0}
            history.append(rec)
            logger(rec)
            if progress:
                progress(rec)
    return student, history
