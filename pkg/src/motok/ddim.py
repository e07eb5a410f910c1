"""Deterministic DDIM sampling with clean-sample prediction and guidance.

The denoiser is any callable ``f(w_t, t, condition) -> w0_hat`` that predicts
the clean sample directly.  Sampling walks an evenly strided, descending
subset of the training steps with eta = 0, so a (seed, schedule, denoiser)
triple always reproduces the same output bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Callable, Optional

import numpy as np

DenoiserFn = Callable[[np.ndarray, int, Any], np.ndarray]


class SamplerError(ValueError):
    """Raised for schedule misuse or ill-shaped denoiser output."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta variance schedule with cached cumulative products."""

    num_train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    def __post_init__(self):
        if self.num_train_steps < 1:
            raise SamplerError(f"num_train_steps must be >= 1, got {self.num_train_steps}")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise SamplerError(
                f"betas must satisfy 0 < start <= end < 1, got ({self.beta_start}, {self.beta_end})"
            )
        betas = np.linspace(self.beta_start, self.beta_end, self.num_train_steps)
        alpha_bars = np.cumprod(1.0 - betas)
        betas.setflags(write=False)
        alpha_bars.setflags(write=False)
        object.__setattr__(self, "_betas", betas)
        object.__setattr__(self, "_alpha_bars", alpha_bars)

    @property
    def betas(self) -> np.ndarray:
        return self._betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return self._alpha_bars


@dataclass(frozen=True)
class Condition:
    """Conditioning payload handed to the denoiser.

    ``text`` is the only slot the guidance path is allowed to blank out;
    ``scene`` and ``obj`` always reach both the conditional and the
    unconditional branch.  ``coarse`` optionally carries a first-pass track
    for coarse-to-fine sampling.
    """

    text: Any = None
    scene: Any = None
    obj: Any = None
    coarse: Any = None


def drop_text(condition: Condition) -> Condition:
    """Null-text variant of a condition; scene and object are kept."""
    return replace(condition, text=None)


@dataclass(frozen=True)
class GuidanceConfig:
    """Classifier-free guidance settings.

    When ``null_condition`` is omitted it defaults to the condition with its
    text slot cleared.
    """

    scale: float
    condition: Condition
    null_condition: Optional[Condition] = None

    def __post_init__(self):
        if not np.isfinite(self.scale):
            raise SamplerError(f"guidance scale must be finite, got {self.scale}")
        if self.null_condition is None:
            object.__setattr__(self, "null_condition", drop_text(self.condition))


def forward_noise(w0: np.ndarray, t: int, schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """Diffuse a clean sample to step t: sqrt(ab_t)*w0 + sqrt(1-ab_t)*noise."""
    w0 = np.asarray(w0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != w0.shape:
        raise SamplerError(f"noise shape {noise.shape} does not match sample {w0.shape}")
    if not 0 <= int(t) < schedule.num_train_steps:
        raise SamplerError(f"step {t} out of range [0, {schedule.num_train_steps})")
    ab = schedule.alpha_bars[int(t)]
    return np.sqrt(ab) * w0 + np.sqrt(1.0 - ab) * noise


def apply_cfg(w_uncond: np.ndarray, w_cond: np.ndarray, scale: float) -> np.ndarray:
    """Guided prediction: uncond + scale * (cond - uncond).

    Evaluated as (1 - scale) * uncond + scale * cond so the scale-0 and
    scale-1 endpoints reproduce their inputs bit for bit.
    """
    w_uncond = np.asarray(w_uncond, dtype=np.float64)
    w_cond = np.asarray(w_cond, dtype=np.float64)
    if w_uncond.shape != w_cond.shape:
        raise SamplerError(
            f"shape mismatch: uncond {w_uncond.shape} vs cond {w_cond.shape}"
        )
    return (1.0 - scale) * w_uncond + scale * w_cond


def inference_steps(schedule: NoiseSchedule, num_infer_steps: int) -> np.ndarray:
    """Evenly spaced descending step subset, always starting at the top step."""
    if not 1 <= num_infer_steps <= schedule.num_train_steps:
        raise SamplerError(
            f"num_infer_steps must be in [1, {schedule.num_train_steps}], got {num_infer_steps}"
        )
    raw = np.linspace(schedule.num_train_steps - 1, 0, num_infer_steps)
    steps = np.unique(np.rint(raw).astype(np.int64))[::-1]
    return steps


def _predict_clean(
    denoiser: DenoiserFn,
    w: np.ndarray,
    t: int,
    guidance: Optional[GuidanceConfig],
) -> np.ndarray:
    if guidance is None:
        pred = np.asarray(denoiser(w, t, None), dtype=np.float64)
    else:
        cond = np.asarray(denoiser(w, t, guidance.condition), dtype=np.float64)
        uncond = np.asarray(denoiser(w, t, guidance.null_condition), dtype=np.float64)
        pred = apply_cfg(uncond, cond, guidance.scale)
    if pred.shape != w.shape:
        raise SamplerError(f"denoiser returned shape {pred.shape}, expected {w.shape}")
    if not np.all(np.isfinite(pred)):
        raise SamplerError(f"denoiser returned non-finite values at step {t}")
    return pred


def ddim_sample(
    denoiser: DenoiserFn,
    shape: tuple,
    schedule: NoiseSchedule,
    num_infer_steps: int = 20,
    guidance: Optional[GuidanceConfig] = None,
    seed: int = 0,
) -> np.ndarray:
    """Draw one sample by deterministic DDIM over the strided step subset.

    Each step queries the (guided) clean-sample prediction, recovers the
    implied noise, and re-noises to the next smaller step; the return value
    is the clean prediction at the final step.
    """
    steps = inference_steps(schedule, num_infer_steps)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(shape)
    alpha_bars = schedule.alpha_bars
    for i, t in enumerate(steps):
        w0_hat = _predict_clean(denoiser, w, int(t), guidance)
        if i == len(steps) - 1:
            return w0_hat
        ab_t = alpha_bars[t]
        ab_next = alpha_bars[steps[i + 1]]
        eps_hat = (w - np.sqrt(ab_t) * w0_hat) / np.sqrt(1.0 - ab_t)
        w = np.sqrt(ab_next) * w0_hat + np.sqrt(1.0 - ab_next) * eps_hat
        if not np.all(np.isfinite(w)):
            raise SamplerError(f"non-finite intermediate at step {int(t)}")
    raise AssertionError("unreachable")


def two_pass_sample(
    denoiser: DenoiserFn,
    shape: tuple,
    schedule: NoiseSchedule,
    num_infer_steps: int = 20,
    guidance: Optional[GuidanceConfig] = None,
    seed: int = 0,
    stride: int = 2,
) -> np.ndarray:
    """Optional coarse-to-fine sampling: a strided first pass conditions a full pass.

    The first pass samples every ``stride``-th row; the result is
    nearest-neighbor upsampled and attached to the condition's ``coarse``
    slot for the second pass.  Denoisers that ignore ``coarse`` reduce this
    to plain sampling with a different seed path.
    """
    if stride < 1:
        raise SamplerError(f"stride must be >= 1, got {stride}")
    rows = shape[0]
    coarse_rows = (rows + stride - 1) // stride
    coarse = ddim_sample(denoiser, (coarse_rows,) + tuple(shape[1:]), schedule,
                         num_infer_steps, guidance, seed)
    upsampled = np.repeat(coarse, stride, axis=0)[:rows]
    if guidance is None:
        fine_guidance = None
        base = Condition(coarse=upsampled)
        fine_denoiser = lambda w, t, c: denoiser(w, t, base)  # noqa: E731
        return ddim_sample(fine_denoiser, shape, schedule, num_infer_steps, None, seed + 1)
    fine_guidance = GuidanceConfig(
        scale=guidance.scale,
        condition=replace(guidance.condition, coarse=upsampled),
        null_condition=replace(guidance.null_condition, coarse=upsampled),
    )
    return ddim_sample(denoiser, shape, schedule, num_infer_steps, fine_guidance, seed + 1)


def gaussian_posterior_denoiser(
    mean: np.ndarray, sigma: float, schedule: NoiseSchedule
) -> DenoiserFn:
    """Analytically optimal clean-sample predictor for N(mean, sigma^2 I) data.

    Under w_t = sqrt(ab)*w0 + sqrt(1-ab)*eps the posterior mean of w0 is
    (sqrt(ab)*sigma^2*w_t + (1-ab)*mean) / (ab*sigma^2 + 1-ab).
    """
    mean = np.asarray(mean, dtype=np.float64)

    def denoiser(w_t: np.ndarray, t: int, condition: Any) -> np.ndarray:
        ab = schedule.alpha_bars[int(t)]
        denom = ab * sigma * sigma + (1.0 - ab)
        return (np.sqrt(ab) * sigma * sigma * w_t + (1.0 - ab) * mean) / denom

    return denoiser
