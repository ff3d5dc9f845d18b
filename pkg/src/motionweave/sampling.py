"""Deterministic DDIM sampling with optional classifier-free guidance."""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch

from .errors import ConfigurationError, ParameterError
from .schedule import NoiseSchedule
from .unet import InjectionState, VideoUNet


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Decreasing timestep subsequence from T-1 down to 0."""
    if not (1 <= steps <= T):
        raise ParameterError(f"steps must lie in [1, T], got {steps}")
    if steps == 1:
        return [T - 1]
    ts = np.round(np.linspace(T - 1, 0, steps)).astype(int)
    out = [int(ts[0])]
    for t in ts[1:]:
        if int(t) < out[-1]:
            out.append(int(t))
    return out


def _predict_eps(
    model,
    x: torch.Tensor,
    t: int,
    cond_ids: torch.Tensor,
    guidance_w: float,
    injection: Optional[InjectionState],
    null_conditioning_trained: bool,
    compute_null_branch: bool,
) -> torch.Tensor:
    B = x.shape[0]
    tt = torch.full((B,), t, dtype=torch.long)
    eps_cond, _ = model(x, tt, cond_ids, injection=injection)
    if guidance_w == 1.0 and not compute_null_branch:
        return eps_cond
    if not null_conditioning_trained:
        raise ConfigurationError(
            "guidance requires a checkpoint trained with null-condition dropout"
        )
    null_ids = torch.zeros_like(cond_ids)
    eps_null, _ = model(x, tt, null_ids, injection=injection)
    if guidance_w == 1.0:
        return eps_cond  # mixing at w=1 is the identity; skip the arithmetic
    return eps_null + guidance_w * (eps_cond - eps_null)


def ddim_sample(
    model: VideoUNet,
    cond_ids,
    schedule: NoiseSchedule,
    shape: tuple[int, int, int, int],
    steps: int = 50,
    guidance_w: float = 1.0,
    seed: int = 0,
    injection: Optional[InjectionState] = None,
    null_conditioning_trained: bool = True,
    compute_null_branch: bool = False,
    batch: int = 1,
) -> torch.Tensor:
    """Sample (batch, n, c, H, W) videos, clamped to [-1, 1].

    Deterministic (eta = 0): a fixed seed yields bit-identical output.
    `cond_ids` is a (batch, 2) long tensor or anything convertible to it.
    When `injection` is set, every denoising step routes the upsampling
    temporal attention through the integrated (reference-token) path.
    """
    if guidance_w != 1.0 and not null_conditioning_trained:
        raise ConfigurationError(
            "guidance_w != 1 requires a checkpoint trained with null-condition dropout"
        )
    cond_ids = torch.as_tensor(cond_ids, dtype=torch.long).reshape(batch, 2)
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn((batch, *shape), generator=gen)
    ts = ddim_timesteps(schedule.T, steps)
    with torch.no_grad():
        for i, t in enumerate(ts):
            eps = _predict_eps(
                model, x, t, cond_ids, guidance_w, injection,
                null_conditioning_trained, compute_null_branch,
            )
            ab = schedule.alpha_bar(t)
            x0 = (x - eps * (1.0 - ab) ** 0.5) / ab ** 0.5
            ab_prev = schedule.alpha_bar(ts[i + 1]) if i + 1 < len(ts) else 1.0
            x = x0 * ab_prev ** 0.5 + eps * (1.0 - ab_prev) ** 0.5
    return x.clamp(-1.0, 1.0)
