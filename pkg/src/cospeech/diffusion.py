"""Noise schedules, forward diffusion, DDIM sampling from clean-signal
predictions, classifier-free guidance, and partial-inversion editing.

The denoiser contract throughout is a callable

    denoiser(x_t, t, condition, cond_enabled) -> predicted clean signal

of identical shape. Samplers are sequential per clip; all randomness comes
from caller-owned ``torch.Generator`` objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import BadRange, KOutOfRange, StepOutOfRange


@dataclass(frozen=True)
class NoiseSchedule:
    """betas[t-1] is the step-t noise rate; alpha_bars has length T+1 with
    alpha_bars[0] == 1 so it can be indexed directly by timestep."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def total_steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.total_steps:
            raise StepOutOfRange(f"t={t} outside [0, {self.total_steps}]")
        return float(self.alpha_bars[t])


def make_linear_schedule(
    total_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    if total_steps < 1:
        raise BadRange("total_steps must be >= 1")
    if not (0 <= beta_start <= beta_end < 1):
        raise BadRange(f"need 0 <= beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, total_steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def make_cosine_schedule(total_steps: int = 1000, s: float = 0.008) -> NoiseSchedule:
    if total_steps < 1:
        raise BadRange("total_steps must be >= 1")
    t = np.arange(total_steps + 1) / total_steps
    f = np.cos((t + s) / (1 + s) * np.pi / 2) ** 2
    alpha_bars = f / f[0]
    betas = np.clip(1.0 - alpha_bars[1:] / alpha_bars[:-1], 1e-8, 0.999)
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def make_schedule(kind: str = "linear", total_steps: int = 1000,
                  beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if kind == "linear":
        return make_linear_schedule(total_steps, beta_start, beta_end)
    if kind == "cosine":
        return make_cosine_schedule(total_steps)
    raise BadRange(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class DdimPlan:
    """Strictly decreasing timestep subsequence; the final step denoises to 0."""

    timesteps: tuple[int, ...]
    eta: float = 0.0

    def __post_init__(self):
        ts = tuple(int(t) for t in self.timesteps)
        if len(ts) < 1:
            raise BadRange("plan needs at least one timestep")
        if any(t2 >= t1 for t1, t2 in zip(ts, ts[1:])):
            raise BadRange("plan timesteps must be strictly decreasing")
        if ts[-1] < 1:
            raise BadRange("last plan timestep must be >= 1")
        if not (0.0 <= self.eta <= 1.0):
            raise BadRange("eta must be in [0, 1]")
        object.__setattr__(self, "timesteps", ts)

    @property
    def n_steps(self) -> int:
        return len(self.timesteps)


def make_ddim_plan(n_steps: int, total_steps: int = 1000, eta: float = 0.0) -> DdimPlan:
    """Uniformly spaced plan from total_steps down to total_steps/n_steps."""
    if not 1 <= n_steps <= total_steps:
        raise BadRange(f"n_steps must be in [1, {total_steps}]")
    ts = [total_steps * k // n_steps for k in range(n_steps, 0, -1)]
    return DdimPlan(timesteps=tuple(ts), eta=eta)


def q_sample(x0, t: int, eps, schedule: NoiseSchedule):
    """Forward-noise x0 to level t in one shot: sqrt(abar)*x0 + sqrt(1-abar)*eps."""
    ab = schedule.alpha_bar(t)
    return (ab ** 0.5) * x0 + ((1.0 - ab) ** 0.5) * eps


def x0_to_eps(x_t, x0_hat, t: int, schedule: NoiseSchedule):
    """Algebraic inverse of q_sample: the noise implied by (x_t, x0_hat)."""
    if t < 1:
        raise StepOutOfRange("x0_to_eps needs t >= 1")
    ab = schedule.alpha_bar(t)
    return (x_t - (ab ** 0.5) * x0_hat) / ((1.0 - ab) ** 0.5)


def ddim_step(x_t, x0_hat, t: int, t_prev: int, schedule: NoiseSchedule,
              eta: float = 0.0, noise=None):
    """One DDIM transition from level t to t_prev (t > t_prev >= 0)."""
    if not (t > t_prev >= 0):
        raise StepOutOfRange(f"need t > t_prev >= 0, got ({t}, {t_prev})")
    ab_t = schedule.alpha_bar(t)
    ab_p = schedule.alpha_bar(t_prev)
    eps_hat = x0_to_eps(x_t, x0_hat, t, schedule)
    sigma = eta * (((1.0 - ab_p) / (1.0 - ab_t)) ** 0.5) * ((1.0 - ab_t / ab_p) ** 0.5)
    dir_coeff = max(1.0 - ab_p - sigma ** 2, 0.0) ** 0.5
    out = (ab_p ** 0.5) * x0_hat + dir_coeff * eps_hat
    if sigma > 0.0:
        if noise is None:
            raise StepOutOfRange("eta > 0 requires noise")
        out = out + sigma * noise
    return out


def cfg_combine(pred_cond, pred_uncond, w: float):
    """Classifier-free guidance: uncond + w * (cond - uncond)."""
    return pred_uncond + w * (pred_cond - pred_uncond)


def _guided_x0(denoiser, x, t, condition, w: float):
    pred_c = denoiser(x, t, condition, True)
    if w == 1.0:
        return pred_c
    pred_u = denoiser(x, t, condition, False)
    return cfg_combine(pred_c, pred_u, w)


def ddim_sample(
    denoiser,
    condition,
    shape: tuple[int, ...],
    plan: DdimPlan,
    schedule: NoiseSchedule,
    w: float = 1.0,
    rng: torch.Generator | None = None,
    x_start: torch.Tensor | None = None,
    constrain=None,
    dtype=torch.float32,
):
    """Run the full DDIM chain from unit-normal noise (or ``x_start``).

    ``constrain(x, t) -> x`` is applied to the running state before every
    denoiser call and once more at t=0 (used for seed-frame inpainting).
    """
    if rng is None:
        rng = torch.Generator().manual_seed(0)
    x = x_start if x_start is not None else torch.randn(shape, generator=rng, dtype=dtype)
    ts = plan.timesteps
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        if constrain is not None:
            x = constrain(x, t)
        x0_hat = _guided_x0(denoiser, x, t, condition, w)
        noise = (
            torch.randn(shape, generator=rng, dtype=dtype) if plan.eta > 0 else None
        )
        x = ddim_step(x, x0_hat, t, t_prev, schedule, eta=plan.eta, noise=noise)
    if constrain is not None:
        x = constrain(x, 0)
    return x


def sdedit_empower(
    denoiser,
    x_in: torch.Tensor,
    condition,
    k_steps: int,
    schedule: NoiseSchedule,
    n_steps: int = 100,
    w: float = 1.0,
    eta: float = 0.0,
    rng: torch.Generator | None = None,
):
    """Diffuse-then-denoise editing: one-shot noise the input to the K-th plan
    level (counted from the low-noise end of a uniform n_steps plan), then run
    the remaining K DDIM steps under the given condition.
    """
    if not 0 <= k_steps <= n_steps:
        raise KOutOfRange(f"K={k_steps} outside [0, {n_steps}]")
    if k_steps == 0:
        return x_in
    if rng is None:
        rng = torch.Generator().manual_seed(0)
    plan = make_ddim_plan(n_steps, schedule.total_steps, eta=eta)
    tail = plan.timesteps[-k_steps:]
    t_start = tail[0]
    eps = torch.randn(x_in.shape, generator=rng, dtype=x_in.dtype)
    x = q_sample(x_in, t_start, eps, schedule)
    for i, t in enumerate(tail):
        t_prev = tail[i + 1] if i + 1 < len(tail) else 0
        x0_hat = _guided_x0(denoiser, x, t, condition, w)
        noise = torch.randn(x_in.shape, generator=rng, dtype=x_in.dtype) if eta > 0 else None
        x = ddim_step(x, x0_hat, t, t_prev, schedule, eta=eta, noise=noise)
    return x
