"""Denoising machinery shared by the three predictors.

Models predict the clean signal (x0 parameterization). The forward
process is the standard variance-preserving one over a cosine schedule;
sampling supports full ancestral DDPM and deterministic strided DDIM.
Classifier-free guidance extrapolates between the conditional and
null-condition predictions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


class SamplerDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"sampler produced non-finite values at step {step}")
        self.step = step


@dataclass
class NoiseSchedule:
    """Cosine alpha-bar schedule with K discrete steps (1-indexed)."""

    k_max: int = 50
    betas: np.ndarray = field(default=None)
    alphas: np.ndarray = field(default=None)
    alpha_bars: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.betas is None:
            s = 0.008
            ts = np.arange(self.k_max + 1) / self.k_max
            f = np.cos((ts + s) / (1 + s) * math.pi / 2.0) ** 2
            abar = f / f[0]
            betas = 1.0 - abar[1:] / abar[:-1]
            self.betas = np.clip(betas, 1e-6, 0.999)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)
        if not (self.betas > 0).all() or not (self.betas < 1).all():
            raise ValueError("betas must lie in (0, 1)")
        if (np.diff(self.betas) < -1e-12).any():
            raise ValueError("betas must be non-decreasing")
        if (np.diff(self.alpha_bars) >= 0).any():
            raise ValueError("alpha_bar must be strictly decreasing")

    def abar(self, k):
        """alpha_bar at step k (k = 0 means the clean signal)."""
        k = np.asarray(k)
        return np.where(k <= 0, 1.0, self.alpha_bars[np.maximum(k, 1) - 1])


@dataclass
class GuidanceConfig:
    scale: float = 3.5
    drop_prob: float = 0.1

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("guidance scale must be >= 0")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop probability must be in [0, 1]")


def q_sample(x0: np.ndarray, k, eps: np.ndarray, schedule: NoiseSchedule):
    """Noised sample at step k: sqrt(abar)*x0 + sqrt(1-abar)*eps.

    k may be a scalar or a per-item vector along the leading axis of x0.
    """
    x0 = np.asarray(x0)
    if np.shape(eps) != x0.shape:
        raise T.ShapeError("q_sample: eps must match x0 shape")
    k_arr = np.atleast_1d(np.asarray(k))
    if (k_arr < 1).any() or (k_arr > schedule.k_max).any():
        raise ValueError(f"step {k} outside 1..{schedule.k_max}")
    if k_arr.size == 1:
        a = float(schedule.abar(int(k_arr[0])))
    else:
        if x0.ndim == 0 or k_arr.shape[0] != x0.shape[0]:
            raise T.ShapeError("q_sample: per-item k must match the batch axis")
        a = schedule.abar(k_arr).reshape((k_arr.shape[0],) + (1,) * (x0.ndim - 1))
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def x0_loss(model, x0: np.ndarray, schedule: NoiseSchedule,
            rng: np.random.Generator, drop_prob: float = 0.0):
    """Mean squared error between x0 and the model's denoised prediction.

    Draws per-item steps and noise; `model(x_k, k, drop_mask)` must return
    a Tensor shaped like x0. drop_mask marks items whose text condition
    should be replaced by the learned null embedding.
    """
    x0 = np.asarray(x0, np.float32)
    b = x0.shape[0]
    k = rng.integers(1, schedule.k_max + 1, size=b)
    eps = rng.standard_normal(x0.shape).astype(np.float32)
    x_k = q_sample(x0, k, eps, schedule).astype(np.float32)
    drop = rng.random(b) < drop_prob
    pred = model(x_k, k, drop)
    diff = T.sub(pred, Tensor(x0))
    return T.mean(T.mul(diff, diff))


def cfg_combine(pred_uncond: np.ndarray, pred_cond: np.ndarray, w: float):
    """uncond + w * (cond - uncond); exactly the conditional branch at w=1."""
    pred_uncond = np.asarray(pred_uncond)
    pred_cond = np.asarray(pred_cond)
    if pred_uncond.shape != pred_cond.shape:
        raise T.ShapeError("cfg_combine: shape mismatch "
                           f"{pred_uncond.shape} vs {pred_cond.shape}")
    if w == 1.0:
        return pred_cond.copy()
    if w == 0.0:
        return pred_uncond.copy()
    return pred_uncond + w * (pred_cond - pred_uncond)


def _ddim_step_indices(k_max: int, steps: int) -> np.ndarray:
    ks = np.unique(np.round(np.linspace(k_max, 1, steps)).astype(int))[::-1]
    return ks


def sample(predict, shape, schedule: NoiseSchedule, rng: np.random.Generator,
           sampler: str = "ddim", steps: int = 10, w: float = 3.5):
    """Draw one x0 estimate.

    predict(x_k, k, conditioned: bool) -> x0 prediction (numpy). At every
    step the guided estimate combines the conditional and unconditional
    branches; when w == 1 only the conditional branch is evaluated.
    """
    if sampler not in ("ddpm_full", "ddim"):
        raise ValueError(f"unknown sampler '{sampler}'")
    if steps > schedule.k_max:
        raise ValueError("steps cannot exceed the schedule length")
    x = rng.standard_normal(shape).astype(np.float32)

    def guided(xk, k):
        cond = np.asarray(predict(xk, k, True), np.float32)
        if w == 1.0:
            return cond
        uncond = np.asarray(predict(xk, k, False), np.float32)
        return cfg_combine(uncond, cond, w).astype(np.float32)

    if sampler == "ddpm_full":
        ks = np.arange(schedule.k_max, 0, -1)
        x0_hat = None
        for k in ks:
            x0_hat = guided(x, int(k))
            if not np.isfinite(x0_hat).all():
                raise SamplerDiverged(int(k))
            abar_k = schedule.abar(k)
            abar_prev = schedule.abar(k - 1)
            beta = schedule.betas[k - 1]
            alpha = schedule.alphas[k - 1]
            mean = (math.sqrt(abar_prev) * beta / (1 - abar_k) * x0_hat
                    + math.sqrt(alpha) * (1 - abar_prev) / (1 - abar_k) * x)
            if k > 1:
                var = beta * (1 - abar_prev) / (1 - abar_k)
                x = mean + math.sqrt(max(var, 0.0)) * \
                    rng.standard_normal(shape).astype(np.float32)
            else:
                x = mean
        return x0_hat

    ks = _ddim_step_indices(schedule.k_max, steps)
    x0_hat = None
    for i, k in enumerate(ks):
        x0_hat = guided(x, int(k))
        if not np.isfinite(x0_hat).all():
            raise SamplerDiverged(int(k))
        abar_k = schedule.abar(k)
        k_prev = int(ks[i + 1]) if i + 1 < len(ks) else 0
        abar_prev = schedule.abar(k_prev)
        eps_hat = (x - math.sqrt(abar_k) * x0_hat) / math.sqrt(1 - abar_k)
        x = (math.sqrt(abar_prev) * x0_hat
             + math.sqrt(max(1 - abar_prev, 0.0)) * eps_hat)
    return x0_hat
