"""Noise schedules, the forward corruption map, trailing timestep plans, and
the ancestral reverse step.

Conventions: a schedule stores signal/noise coefficient tables alpha[0..T],
sigma[0..T] with alpha[0] = 1, sigma[0] = 0, alpha[T] = 0 exactly (zero
terminal SNR), and alpha_t^2 + sigma_t^2 = 1 for every t. The corruption of a
clean latent is z_t = alpha_t * z0 + sigma_t * eps.

At t = T the signal coefficient vanishes, so a noise prediction cannot be
inverted to a clean-latent estimate there; the reverse step instead reads the
network output under the velocity parameterization (x0_hat = alpha_t * z_t -
sigma_t * out), which is well defined at the terminal step. Every other
timestep uses plain noise-prediction inversion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha: np.ndarray  # shape (T+1,), alpha[0] = 1, alpha[T] = 0
    sigma: np.ndarray  # shape (T+1,), sigma[0] = 0, sigma[T] = 1
    kind: str = "linear"

    def validate(self, tol: float = 1e-6):
        a, s = self.alpha, self.sigma
        if a.shape != (self.T + 1,) or s.shape != (self.T + 1,):
            raise ScheduleError("coefficient tables must have length T+1")
        if np.abs(a**2 + s**2 - 1.0).max() > tol:
            raise ScheduleError("alpha^2 + sigma^2 deviates from 1")
        if np.any(np.diff(a) > 0) or np.any(np.diff(s) < 0):
            raise ScheduleError("alpha must be nonincreasing and sigma nondecreasing")
        if a[0] != 1.0 or s[0] != 0.0 or a[self.T] != 0.0:
            raise ScheduleError("boundary conditions alpha[0]=1, sigma[0]=0, alpha[T]=0 violated")
        if np.any(a < 0) or np.any(s < 0):
            raise ScheduleError("coefficients must be nonnegative")

    def to_json(self) -> str:
        return json.dumps(
            {"T": self.T, "kind": self.kind, "alpha": self.alpha.tolist(), "sigma": self.sigma.tolist()}
        )

    @staticmethod
    def from_json(text: str) -> "NoiseSchedule":
        d = json.loads(text)
        return NoiseSchedule(
            T=int(d["T"]),
            alpha=np.asarray(d["alpha"], dtype=np.float64),
            sigma=np.asarray(d["sigma"], dtype=np.float64),
            kind=d.get("kind", "linear"),
        )


@dataclass(frozen=True)
class TimestepPlan:
    steps: tuple  # strictly decreasing timesteps in [1, T], steps[0] == T
    T: int

    def __post_init__(self):
        if not self.steps:
            raise ScheduleError("empty timestep plan")
        if self.steps[0] != self.T:
            raise ScheduleError("plan must start at T")
        if any(a <= b for a, b in zip(self.steps, self.steps[1:])):
            raise ScheduleError("plan must be strictly decreasing")
        if self.steps[-1] < 1:
            raise ScheduleError("plan must end at a timestep >= 1")


def make_schedule(T: int, kind: str = "linear") -> NoiseSchedule:
    """Build a zero-terminal-SNR schedule of the given family.

    linear: sqrt of the cumulative product of (1 - beta) for beta linearly
    spaced in [1e-4, 0.02], then affinely rescaled so alpha_T = 0 with alpha_1
    kept at its original value. cosine: the squared-cosine cumulative signal
    curve with offset 0.008, rescaled the same way.
    """
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if kind == "linear":
        betas = np.linspace(1e-4, 0.02, T, dtype=np.float64)
        abar_sqrt = np.sqrt(np.cumprod(1.0 - betas))
    elif kind == "cosine":
        s = 0.008
        t = np.arange(1, T + 1, dtype=np.float64)
        f = np.cos((t / T + s) / (1 + s) * np.pi / 2.0) ** 2
        f0 = np.cos(s / (1 + s) * np.pi / 2.0) ** 2
        abar_sqrt = np.sqrt(f / f0)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    if T == 1:
        rescaled = np.array([0.0])
    else:
        a1, aT = abar_sqrt[0], abar_sqrt[-1]
        rescaled = (abar_sqrt - aT) * (a1 / (a1 - aT))
        rescaled[-1] = 0.0
    alpha = np.concatenate([[1.0], rescaled])
    sigma = np.sqrt(np.clip(1.0 - alpha**2, 0.0, None))
    sigma[0] = 0.0
    sigma[-1] = 1.0
    sched = NoiseSchedule(T=T, alpha=alpha, sigma=sigma, kind=kind)
    sched.validate()
    return sched


def forward_diffuse(z0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """z_t = alpha_t * z0 + sigma_t * eps."""
    z0 = np.asarray(z0)
    eps = np.asarray(eps)
    if eps.shape != z0.shape:
        raise ScheduleError(f"noise shape {eps.shape} does not match latent shape {z0.shape}")
    if not (0 <= t <= schedule.T):
        raise ScheduleError(f"timestep {t} outside [0, {schedule.T}]")
    return schedule.alpha[t] * z0 + schedule.sigma[t] * eps


def select_timesteps_trailing(T: int, n_steps: int) -> TimestepPlan:
    """Trailing plan: steps counted back from T in strides of T/n_steps.

    steps_i = round(T - i*T/n_steps) for i = 0..n_steps-1, clipped to >= 1,
    deduplicated keeping the larger step. The first step is always T, so
    sampling starts from pure noise.
    """
    if not (1 <= n_steps <= T):
        raise ScheduleError(f"n_steps must be in [1, {T}], got {n_steps}")
    raw = [int(round(T - i * T / n_steps)) for i in range(n_steps)]
    steps = []
    for s in raw:
        s = max(s, 1)
        if not steps or s < steps[-1]:
            steps.append(s)
    return TimestepPlan(steps=tuple(steps), T=T)


def predict_x0(z_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Invert the forward map: x0_hat = (z_t - sigma_t * eps_hat) / alpha_t."""
    a = schedule.alpha[t]
    if a <= 0.0:
        raise ScheduleError(
            f"alpha[{t}] = 0: noise prediction is not invertible at the terminal step"
        )
    return (z_t - schedule.sigma[t] * eps_hat) / a


def ddpm_step(
    z_t: np.ndarray,
    model_out: np.ndarray,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One ancestral reverse step t -> t_prev with the small posterior variance.

    model_out is a noise prediction except at t = T (alpha_t = 0), where it is
    read as a velocity prediction so the clean-latent estimate stays defined.
    At t_prev = 0 the posterior mean is returned without noise.
    """
    if not (t > t_prev >= 0):
        raise ScheduleError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    a_t, s_t = schedule.alpha[t], schedule.sigma[t]
    a_p, s_p = schedule.alpha[t_prev], schedule.sigma[t_prev]
    if a_t > 0.0:
        x0_hat = (z_t - s_t * model_out) / a_t
    else:
        # terminal step: velocity reading, x0_hat = alpha*z - sigma*out
        x0_hat = a_t * z_t - s_t * model_out
    a_ts = a_t / a_p  # a_p > 0 for every t_prev < T
    var_ts = s_t**2 - a_ts**2 * s_p**2
    mean = (a_ts * s_p**2 / s_t**2) * z_t + (a_p * var_ts / s_t**2) * x0_hat
    if t_prev == 0:
        return mean
    var = var_ts * s_p**2 / s_t**2
    if rng is None:
        raise ScheduleError("rng required when t_prev > 0 (posterior noise draw)")
    return mean + np.sqrt(max(var, 0.0)) * rng.standard_normal(z_t.shape)
