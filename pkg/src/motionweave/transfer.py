"""Reference-feature motion transfer: extraction, gating, integration.

A frozen copy of the base checkpoint runs one forward pass over the
noised reference video; the inputs of its upsampling temporal-attention
sites become the reference feature set. During generation each active
site gates those features with a predicted scale map, tags them with
reference position rows, and appends them as extra key/value tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .errors import ConfigurationError, ParameterError, ShapeError
from .schedule import NoiseSchedule, q_sample
from .sampling import ddim_sample
from .unet import (
    UP_SITES,
    InjectionState,
    SiteScaler,
    TemporalAttention,
    VideoUNet,
)
from .video import ConditionLabel, Video


@dataclass(frozen=True)
class FeatureMap:
    """Features entering one temporal-attention site, laid out [h, w, n, c]."""

    site_id: str
    data: torch.Tensor

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ShapeError(f"feature map must be [h, w, n, c], got {tuple(self.data.shape)}")

    @property
    def n_frames(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ScaleMap:
    """Per-location, per-frame gate in [0, 1], laid out [h, w, n, 1]."""

    data: torch.Tensor

    def __post_init__(self):
        d = self.data
        if d.ndim != 4 or d.shape[-1] != 1:
            raise ShapeError(f"scale map must be [h, w, n, 1], got {tuple(d.shape)}")
        if d.numel() and (d.min() < 0.0 or d.max() > 1.0):
            raise ParameterError("scale map values must lie in [0, 1]")


@dataclass(frozen=True)
class InjectionConfig:
    """Which sites inject, how reference tokens are positioned, and an
    optional constant gate that bypasses the scaler (0 drops the tokens)."""

    active_sites: tuple[str, ...] = UP_SITES
    position_mode: str = "extended"  # reference rows n..2n-1; "aligned" reuses 0..n-1
    constant_scale_override: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "active_sites", tuple(self.active_sites))
        if not self.active_sites:
            raise ConfigurationError("at least one injection site must be active")
        unknown = set(self.active_sites) - set(UP_SITES)
        if unknown:
            raise ConfigurationError(f"unknown sites: {sorted(unknown)}")
        if self.position_mode not in ("extended", "aligned"):
            raise ConfigurationError(f"unknown position mode {self.position_mode!r}")
        if self.constant_scale_override is not None and self.constant_scale_override < 0:
            raise ParameterError("constant scale override must be >= 0")


@dataclass(frozen=True)
class ReferenceFeatureSet:
    """Ordered site -> FeatureMap map captured from the frozen extractor."""

    entries: dict  # site_id -> FeatureMap
    t_ref: int
    extractor_hash: str
    noise_seed: int

    def __post_init__(self):
        if tuple(self.entries.keys()) != UP_SITES:
            raise ConfigurationError(
                f"reference features must cover sites {UP_SITES}, got {tuple(self.entries)}"
            )
        frames = {fm.n_frames for fm in self.entries.values()}
        if len(frames) != 1:
            raise ShapeError(f"reference sites disagree on frame count: {sorted(frames)}")

    @property
    def n_frames(self) -> int:
        return next(iter(self.entries.values())).n_frames

    def sites(self) -> tuple[str, ...]:
        return tuple(self.entries.keys())


# ----------------------------------------------------------------------
# Extraction


def extract_gamma_batch(
    extractor: VideoUNet,
    x_ref: torch.Tensor,
    t_ref: int,
    eps: torch.Tensor,
    schedule: NoiseSchedule,
) -> dict:
    """Batched tap capture: (B, n, c, H, W) reference videos -> site -> (B, h, w, n, c).

    The extractor runs under no_grad with the null condition; its
    parameters are never touched.
    """
    x_t = q_sample(x_ref, t_ref, eps, schedule)
    B = x_ref.shape[0]
    t = torch.full((B,), t_ref, dtype=torch.long)
    null_ids = torch.zeros((B, 2), dtype=torch.long)
    with torch.no_grad():
        _, taps = extractor(x_t, t, null_ids, collect_taps=True)
    return taps


def extract_reference_features(
    extractor: VideoUNet,
    x_ref: Video,
    t_ref: int,
    noise_seed: int,
    schedule: NoiseSchedule,
    extractor_hash: Optional[str] = None,
    validate_purity: bool = False,
) -> ReferenceFeatureSet:
    """Capture the upsampling-site inputs for one reference video.

    Deterministic in (x_ref, t_ref, noise_seed). With validate_purity the
    extractor weights are hashed before and after the pass and compared.
    """
    from .checkpoint import model_weights_hash  # local import to avoid a cycle

    if not (0 <= t_ref < schedule.T):
        raise ParameterError(f"t_ref={t_ref} outside the schedule range")
    x = torch.from_numpy(x_ref.data).float().unsqueeze(0)
    gen = torch.Generator().manual_seed(noise_seed)
    eps = torch.randn(x.shape, generator=gen)
    before = model_weights_hash(extractor) if (validate_purity or extractor_hash is None) else extractor_hash
    taps = extract_gamma_batch(extractor, x, t_ref, eps, schedule)
    if validate_purity:
        after = model_weights_hash(extractor)
        if after != before:
            raise ConfigurationError("extractor parameters changed during feature extraction")
    entries = {site: FeatureMap(site, taps[site][0]) for site in UP_SITES}
    return ReferenceFeatureSet(
        entries=entries, t_ref=t_ref, extractor_hash=before, noise_seed=noise_seed
    )


def save_reference_features(gamma: ReferenceFeatureSet, path: str) -> None:
    """Persist a feature set to the tensor-archive format, keyed by site."""
    from .checkpoint import save_archive

    tensors = {site: fm.data for site, fm in gamma.entries.items()}
    save_archive(
        path,
        tensors,
        {
            "kind": "gamma",
            "t_ref": gamma.t_ref,
            "extractor_hash": gamma.extractor_hash,
            "noise_seed": gamma.noise_seed,
        },
    )


def load_reference_features(path: str) -> ReferenceFeatureSet:
    from .checkpoint import load_archive

    tensors, manifest = load_archive(path)
    if manifest.get("kind") != "gamma":
        raise ConfigurationError(f"{path} is not a reference-feature archive")
    entries = {site: FeatureMap(site, torch.from_numpy(tensors[site])) for site in UP_SITES}
    return ReferenceFeatureSet(
        entries=entries,
        t_ref=manifest["t_ref"],
        extractor_hash=manifest["extractor_hash"],
        noise_seed=manifest["noise_seed"],
    )


# ----------------------------------------------------------------------
# Scale maps and integration


def scaler_forward(f_r: FeatureMap, f_g: FeatureMap, scaler: SiteScaler) -> ScaleMap:
    """Predict the per-location gate for one site from (reference, generation)
    features of identical shape."""
    if f_r.site_id != f_g.site_id:
        raise ConfigurationError(
            f"scaler inputs come from different sites: {f_r.site_id!r} vs {f_g.site_id!r}"
        )
    if f_r.data.shape != f_g.data.shape:
        raise ShapeError("reference and generation features must share a shape")
    h, w, n, c = f_r.data.shape
    ref_grid = f_r.data.permute(2, 3, 0, 1)  # (n, c, h, w)
    gen_grid = f_g.data.permute(2, 3, 0, 1)
    alpha = scaler(ref_grid, gen_grid)  # (n, 1, h, w)
    return ScaleMap(alpha.permute(2, 3, 0, 1))


def apply_scale(alpha, f_r: FeatureMap) -> FeatureMap:
    """Elementwise gate broadcast over channels: [h,w,n,1] * [h,w,n,c]."""
    a = alpha.data if isinstance(alpha, ScaleMap) else torch.as_tensor(alpha)
    try:
        scaled = f_r.data * a
    except RuntimeError as exc:
        raise ShapeError(f"scale map does not broadcast over the feature map: {exc}") from exc
    if scaled.shape != f_r.data.shape:
        raise ShapeError(
            f"scale map {tuple(a.shape)} does not broadcast over {tuple(f_r.data.shape)}"
        )
    return FeatureMap(f_r.site_id, scaled)


def temporal_integrate(f_g: FeatureMap, f_r_hat: FeatureMap) -> FeatureMap:
    """Concatenate along frames: generation tokens first, reference second."""
    if f_g.data.shape != f_r_hat.data.shape:
        raise ShapeError(
            f"cannot integrate {tuple(f_g.data.shape)} with {tuple(f_r_hat.data.shape)}"
        )
    if f_g.site_id != f_r_hat.site_id:
        raise ConfigurationError("integration requires features from the same site")
    return FeatureMap(f_g.site_id, torch.cat([f_g.data, f_r_hat.data], dim=2))


def tag_reference_positions(
    f_r: FeatureMap, attn: TemporalAttention, mode: str = "extended"
) -> FeatureMap:
    """Add the reference position rows (n..2n-1, or 0..n-1 when aligned)."""
    h, w, n, c = f_r.data.shape
    positions = torch.arange(n, 2 * n) if mode == "extended" else torch.arange(n)
    pe = attn.encode_positions(positions)  # (n, c)
    return FeatureMap(f_r.site_id, f_r.data + pe)


def integrated_temporal_attention(
    f_g: FeatureMap,
    f_int: FeatureMap,
    attn: TemporalAttention,
    cfg: InjectionConfig,
    return_weights: bool = False,
):
    """Attention with queries from the generation half and keys/values from
    the integrated sequence.

    The first n frames of `f_int` are the generation tokens and receive
    position rows 0..n-1 alongside the queries; the trailing frames are
    the prepared reference block (already position-tagged per
    `cfg.position_mode` and gated) and enter the key/value projections
    verbatim. Output shape equals the generation input shape.
    """
    h, w, n, c = f_g.data.shape
    if f_int.data.shape[2] < n:
        raise ShapeError("integrated sequence is shorter than the generation sequence")
    tokens = f_g.data.reshape(h * w, n, c)
    kv_gen = f_int.data[:, :, :n, :].reshape(h * w, n, c)
    n_ref = f_int.data.shape[2] - n
    kv_ref = f_int.data[:, :, n:, :].reshape(h * w, n_ref, c)
    out = attn.apply_with_kv(tokens, kv_gen, kv_ref, return_weights=return_weights)
    if return_weights:
        out, weights = out
        return FeatureMap(f_g.site_id, out.reshape(h, w, n, c)), weights
    return FeatureMap(f_g.site_id, out.reshape(h, w, n, c))


def temporal_attention(f: FeatureMap, attn: TemporalAttention, positions=None, return_weights: bool = False):
    """Baseline per-location attention over frames for one feature map."""
    h, w, n, c = f.data.shape
    tokens = f.data.reshape(h * w, n, c)
    pos = None if positions is None else torch.as_tensor(positions, dtype=torch.long)
    out = attn.apply_tokens(tokens, pos, return_weights=return_weights)
    if return_weights:
        out, weights = out
        return FeatureMap(f.site_id, out.reshape(h, w, n, c)), weights
    return FeatureMap(f.site_id, out.reshape(h, w, n, c))


# ----------------------------------------------------------------------
# Injected sampling


def build_injection_state(
    gamma: ReferenceFeatureSet,
    cfg: InjectionConfig,
    scalers: Optional[nn.ModuleDict],
    batch: int = 1,
    collect_scale_maps: bool = False,
) -> InjectionState:
    missing = set(cfg.active_sites) - set(gamma.sites())
    if missing:
        raise ConfigurationError(
            f"reference features missing for active sites: {sorted(missing)}"
        )
    if cfg.constant_scale_override is None and scalers is None:
        raise ConfigurationError("scaler-gated injection needs scaler modules")
    batched = {
        site: fm.data.unsqueeze(0).expand(batch, *fm.data.shape)
        for site, fm in gamma.entries.items()
    }
    return InjectionState(
        active_sites=cfg.active_sites,
        gamma=batched,
        scalers=scalers,
        constant_scale=cfg.constant_scale_override,
        position_mode=cfg.position_mode,
        scale_maps={} if collect_scale_maps else None,
    )


def transfer_sample(
    model: VideoUNet,
    scalers: Optional[nn.ModuleDict],
    gamma: ReferenceFeatureSet,
    cond: ConditionLabel,
    cfg: InjectionConfig,
    schedule: NoiseSchedule,
    shape: tuple[int, int, int, int],
    steps: int = 50,
    guidance_w: float = 1.0,
    seed: int = 0,
    null_conditioning_trained: bool = True,
) -> Video:
    """DDIM sampling with reference injection at every denoising step.

    The reference feature set is extracted once and reused across steps;
    scale maps are recomputed per step from the evolving generation
    features. Deterministic in (gamma, seed, config).
    """
    injection = build_injection_state(gamma, cfg, scalers, batch=1)
    cond_ids = torch.tensor([[cond.appearance_id, cond.background_id]], dtype=torch.long)
    x = ddim_sample(
        model,
        cond_ids,
        schedule,
        shape,
        steps=steps,
        guidance_w=guidance_w,
        seed=seed,
        injection=injection,
        null_conditioning_trained=null_conditioning_trained,
        batch=1,
    )
    return Video(data=x[0].numpy())
