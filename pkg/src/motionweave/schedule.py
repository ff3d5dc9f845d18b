"""Diffusion noise schedule and the forward/inverse noising maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError, SingularityError


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta DDPM schedule with precomputed cumulative products."""

    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.betas.shape != (self.T,) or self.alpha_bars.shape != (self.T,):
            raise ShapeError("schedule arrays must have length T")
        if not (0.0 < self.betas[0] and self.betas[-1] < 1.0):
            raise ParameterError("betas must lie in (0, 1)")
        if np.any(np.diff(self.betas) < 0):
            raise ParameterError("betas must be non-decreasing")
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ParameterError("alpha_bars must be strictly decreasing")

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[t])


def make_schedule(T: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Build a linear beta schedule with `T` steps.

    Raises ParameterError for an invalid range (requires
    0 < beta_min <= beta_max < 1 and T >= 2).
    """
    if T < 2:
        raise ParameterError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ParameterError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    betas = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(T=T, betas=betas, alpha_bars=alpha_bars)


def _promote(arr):
    """Numpy inputs compute in float64 so the noising round-trip stays exact
    even where 1/sqrt(alpha_bar) amplifies rounding; torch tensors keep
    their dtype (the training path owns its precision)."""
    if isinstance(arr, np.ndarray):
        return arr.astype(np.float64, copy=False)
    return arr


def q_sample(x0, t: int, eps, schedule: NoiseSchedule):
    """Noise a clean sample to timestep `t`:  sqrt(ab)*x0 + sqrt(1-ab)*eps.

    Works on numpy arrays and torch tensors alike; `eps` must match `x0`'s
    shape exactly.
    """
    if tuple(x0.shape) != tuple(eps.shape):
        raise ShapeError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    if not (0 <= t < schedule.T):
        raise ParameterError(f"t={t} outside [0, {schedule.T})")
    ab = schedule.alpha_bar(t)
    return _promote(x0) * ab ** 0.5 + _promote(eps) * (1.0 - ab) ** 0.5


def predict_x0(x_t, eps_hat, t: int, schedule: NoiseSchedule):
    """Invert q_sample given a noise estimate: (x_t - sqrt(1-ab)*eps)/sqrt(ab)."""
    if tuple(x_t.shape) != tuple(eps_hat.shape):
        raise ShapeError(f"eps_hat shape {tuple(eps_hat.shape)} != x_t shape {tuple(x_t.shape)}")
    if not (0 <= t < schedule.T):
        raise ParameterError(f"t={t} outside [0, {schedule.T})")
    ab = schedule.alpha_bar(t)
    if ab <= 0.0:
        raise SingularityError(f"alpha_bar[{t}] is not positive")
    return (_promote(x_t) - _promote(eps_hat) * (1.0 - ab) ** 0.5) / ab ** 0.5
