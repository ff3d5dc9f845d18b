"""Training steps for the base model and the transfer finetune."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .errors import NumericError, ParameterError
from .schedule import NoiseSchedule
from .transfer import InjectionConfig, extract_gamma_batch
from .unet import InjectionState, VideoUNet


def make_optimizer(params, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, foreach=True)


def _alpha_bars(schedule: NoiseSchedule, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(schedule.alpha_bars).to(dtype)


def _noise_batch(x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, schedule: NoiseSchedule):
    ab = _alpha_bars(schedule, x0.dtype)[t].view(-1, 1, 1, 1, 1)
    return x0 * ab.sqrt() + eps * (1.0 - ab).sqrt()


@dataclass
class StepDetails:
    """Tensors saved from one step so a test can recompute the loss."""

    t: torch.Tensor
    eps: torch.Tensor
    eps_hat: torch.Tensor
    cond_ids: torch.Tensor


def _check_finite(loss: torch.Tensor, t: torch.Tensor) -> None:
    if not torch.isfinite(loss):
        raise NumericError(
            f"non-finite training loss {loss.item()!r} (timesteps {t.tolist()})"
        )


def base_training_step(
    model: VideoUNet,
    videos: torch.Tensor,
    cond_ids: torch.Tensor,
    schedule: NoiseSchedule,
    optimizer: torch.optim.Optimizer,
    rng: torch.Generator,
    p_null: float = 0.1,
    grad_clip: float = 1.0,
    t_override: Optional[torch.Tensor] = None,
    noise_override: Optional[torch.Tensor] = None,
    return_details: bool = False,
):
    """One denoising-MSE step on a (B, n, c, H, W) batch.

    Timesteps are drawn uniformly per sample; with probability `p_null`
    a sample's condition is replaced by the null label. Applies one
    optimizer update to every parameter with requires_grad set.
    """
    if videos.ndim != 5 or videos.shape[0] == 0:
        raise ParameterError("batch must be a non-empty (B, n, c, H, W) tensor")
    B = videos.shape[0]
    t = t_override if t_override is not None else torch.randint(
        0, schedule.T, (B,), generator=rng
    )
    eps = noise_override if noise_override is not None else torch.randn(
        videos.shape, generator=rng, dtype=videos.dtype
    )
    cond = cond_ids.clone()
    if p_null > 0.0:
        drop = torch.rand((B,), generator=rng) < p_null
        cond[drop] = 0
    x_t = _noise_batch(videos, t, eps, schedule)
    eps_hat, _ = model(x_t, t, cond)
    loss = F.mse_loss(eps_hat, eps)
    _check_finite(loss, t)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if grad_clip:
        torch.nn.utils.clip_grad_norm_(
            [p for g in optimizer.param_groups for p in g["params"]], grad_clip
        )
    optimizer.step()
    value = float(loss.detach())
    if return_details:
        return value, StepDetails(t=t, eps=eps, eps_hat=eps_hat.detach(), cond_ids=cond)
    return value


def transfer_training_step(
    model: VideoUNet,
    scalers: Optional[nn.ModuleDict],
    extractor: VideoUNet,
    x_ref: torch.Tensor,
    x_tgt: torch.Tensor,
    cond_ids: torch.Tensor,
    cfg: InjectionConfig,
    schedule: NoiseSchedule,
    optimizer: torch.optim.Optimizer,
    rng: torch.Generator,
    t_ref: int = 100,
    grad_clip: float = 1.0,
    t_override: Optional[torch.Tensor] = None,
    noise_override: Optional[torch.Tensor] = None,
    ref_noise_override: Optional[torch.Tensor] = None,
    return_details: bool = False,
):
    """One transfer step on paired (reference, target) batches.

    Reference features are extracted fresh from the frozen extractor with
    per-step noise, the target is noised to a uniform timestep, and the
    denoising MSE updates only the parameters the optimizer owns (the
    upsampling QKV projections and scalers).
    """
    if x_ref.shape != x_tgt.shape:
        raise ParameterError("reference and target batches must share a shape")
    B = x_ref.shape[0]
    eps_ref = ref_noise_override if ref_noise_override is not None else torch.randn(
        x_ref.shape, generator=rng, dtype=x_ref.dtype
    )
    gamma = {
        site: taps for site, taps in extract_gamma_batch(
            extractor, x_ref, t_ref, eps_ref, schedule
        ).items()
    }
    injection = InjectionState(
        active_sites=cfg.active_sites,
        gamma=gamma,
        scalers=scalers,
        constant_scale=cfg.constant_scale_override,
        position_mode=cfg.position_mode,
    )
    t = t_override if t_override is not None else torch.randint(
        0, schedule.T, (B,), generator=rng
    )
    eps = noise_override if noise_override is not None else torch.randn(
        x_tgt.shape, generator=rng, dtype=x_tgt.dtype
    )
    x_t = _noise_batch(x_tgt, t, eps, schedule)
    eps_hat, _ = model(x_t, t, cond_ids, injection=injection)
    loss = F.mse_loss(eps_hat, eps)
    _check_finite(loss, t)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if grad_clip:
        torch.nn.utils.clip_grad_norm_(
            [p for g in optimizer.param_groups for p in g["params"]], grad_clip
        )
    optimizer.step()
    value = float(loss.detach())
    if return_details:
        return value, StepDetails(t=t, eps=eps, eps_hat=eps_hat.detach(), cond_ids=cond_ids)
    return value
