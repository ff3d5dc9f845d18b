"""Conditional video denoising UNet with per-level temporal attention.

Layout for a 3-level net on 32x32 input (resolutions in parentheses):

    conv_in (32) -> down1 (32) -> down2 (16) -> down3 (8) -> mid (4)
      -> up1 (4) -> up2 (8) -> up3 (16) -> head (32) -> conv_out

Every level carries one temporal attention block on each path. The three
upsampling-path blocks ("up1", "up2", "up3", coarse to fine) are the
injection sites: their inputs are exposed as taps, and during transfer
they accept extra reference key/value tokens.

Spatial convolutions treat frames as batch entries; temporal attention
treats each spatial location as an independent token sequence over frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .errors import CapacityError, ConfigurationError, ParameterError, ShapeError

UP_SITES = ("up1", "up2", "up3")
DOWN_SITES = ("down1", "down2", "down3")


@dataclass(frozen=True)
class UNetSpec:
    """Architecture hyperparameters; hashed into every checkpoint."""

    levels: int = 3
    widths: tuple[int, ...] = (32, 64, 96)
    res_blocks: int = 2
    head_dim: int = 8
    pos_table_len: int = 16  # P; must cover 2n for integrated sequences
    cond_dim: int = 64
    n_appearance: int = 72
    n_background: int = 6
    in_channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.levels != len(self.widths):
            raise ParameterError("widths must list one channel count per level")
        if self.head_dim <= 0 or self.pos_table_len < 2:
            raise ParameterError("head_dim must be positive and P >= 2")
        for w in self.widths:
            if w % self.head_dim:
                raise ParameterError(f"width {w} not divisible by head_dim {self.head_dim}")


def _num_groups(channels: int, cap: int = 8) -> int:
    g = min(cap, channels)
    while channels % g:
        g -= 1
    return g


def sinusoidal_embedding(positions: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Classic transformer sin/cos table rows for integer positions."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / max(half, 1)
    )
    args = positions.double()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb.float()


def _init_linear(m: nn.Linear, gen: torch.Generator, std: Optional[float] = None, zero: bool = False):
    if zero:
        nn.init.zeros_(m.weight)
    else:
        s = std if std is not None else (2.0 / m.in_features) ** 0.5
        with torch.no_grad():
            m.weight.normal_(0.0, s, generator=gen)
    if m.bias is not None:
        nn.init.zeros_(m.bias)


def _init_conv(m: nn.Conv2d, gen: torch.Generator, zero: bool = False):
    if zero:
        nn.init.zeros_(m.weight)
    else:
        fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
        with torch.no_grad():
            m.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
    if m.bias is not None:
        nn.init.zeros_(m.bias)


class ResBlock(nn.Module):
    def __init__(self, ci: int, co: int, emb_dim: int, gen: torch.Generator):
        super().__init__()
        self.norm1 = nn.GroupNorm(_num_groups(ci), ci)
        self.conv1 = nn.Conv2d(ci, co, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, co)
        self.norm2 = nn.GroupNorm(_num_groups(co), co)
        self.conv2 = nn.Conv2d(co, co, 3, padding=1)
        self.skip = nn.Conv2d(ci, co, 1) if ci != co else nn.Identity()
        _init_conv(self.conv1, gen)
        _init_linear(self.emb_proj, gen, std=0.02)
        _init_conv(self.conv2, gen, zero=True)  # residual branch starts silent
        if isinstance(self.skip, nn.Conv2d):
            _init_conv(self.skip, gen)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class Attention(nn.Module):
    """Multi-head scaled dot-product attention over (L, tokens, channels)."""

    def __init__(self, channels: int, head_dim: int, gen: torch.Generator, qkv_bias: bool = False):
        super().__init__()
        if channels % head_dim:
            raise ParameterError(f"channels {channels} not divisible by head_dim {head_dim}")
        self.channels = channels
        self.head_dim = head_dim
        self.heads = channels // head_dim
        self.w_q = nn.Linear(channels, channels, bias=qkv_bias)
        self.w_k = nn.Linear(channels, channels, bias=qkv_bias)
        self.w_v = nn.Linear(channels, channels, bias=qkv_bias)
        self.w_o = nn.Linear(channels, channels)
        for m in (self.w_q, self.w_k, self.w_v):
            _init_linear(m, gen, std=channels ** -0.5)
        _init_linear(self.w_o, gen, zero=True)

    def attend(self, q_in: torch.Tensor, kv_in: torch.Tensor, return_weights: bool = False):
        """q_in: (L, nq, C), kv_in: (L, nk, C) -> (L, nq, C)."""
        L, nq, C = q_in.shape
        nk = kv_in.shape[1]
        h, d = self.heads, self.head_dim
        q = self.w_q(q_in).view(L, nq, h, d).transpose(1, 2)
        k = self.w_k(kv_in).view(L, nk, h, d).transpose(1, 2)
        v = self.w_v(kv_in).view(L, nk, h, d).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(d)
        weights = torch.softmax(logits, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(L, nq, C)
        out = self.w_o(out)
        if return_weights:
            return out, weights
        return out


class TemporalAttention(nn.Module):
    """Per-location attention across frames, with a fixed sinusoidal
    position table of length P covering integrated (2n-token) sequences."""

    def __init__(self, channels: int, head_dim: int, pos_table_len: int, gen: torch.Generator):
        super().__init__()
        self.attn = Attention(channels, head_dim, gen, qkv_bias=False)
        self.channels = channels
        table = sinusoidal_embedding(torch.arange(pos_table_len), channels)
        self.register_buffer("pos_table", table, persistent=False)

    @property
    def capacity(self) -> int:
        return self.pos_table.shape[0]

    def encode_positions(self, positions: torch.Tensor) -> torch.Tensor:
        if positions.numel() > 0 and int(positions.max()) >= self.capacity:
            raise CapacityError(
                f"position {int(positions.max())} exceeds table length {self.capacity}"
            )
        return self.pos_table[positions]

    def apply_tokens(
        self,
        tokens: torch.Tensor,
        positions: Optional[torch.Tensor] = None,
        return_weights: bool = False,
    ):
        """Baseline path: tokens (L, n, C) -> attended tokens + residual."""
        L, n, C = tokens.shape
        if n > self.capacity:
            raise CapacityError(f"{n} tokens exceed position table length {self.capacity}")
        if positions is None:
            positions = torch.arange(n)
        t = tokens + self.encode_positions(positions)
        if return_weights:
            out, w = self.attn.attend(t, t, return_weights=True)
            return tokens + out, w
        return tokens + self.attn.attend(t, t)

    def apply_with_kv(
        self,
        tokens: torch.Tensor,
        kv_gen: torch.Tensor,
        kv_ref: torch.Tensor,
        return_weights: bool = False,
    ):
        """Attention with an extended key/value sequence.

        `tokens` and `kv_gen` are raw (L, n, C) features and receive the
        0..n-1 position rows; `kv_ref` is a fully prepared (L, n_ref, C)
        block (position-tagged and gated upstream) appended verbatim. With
        an empty `kv_ref` this is exactly the baseline path.
        """
        L, n, C = tokens.shape
        n_ref = kv_ref.shape[1]
        if kv_ref.shape[0] != L or kv_ref.shape[2] != C or kv_gen.shape != tokens.shape:
            raise ShapeError("key/value blocks must match the generation layout")
        if n + n_ref > self.capacity:
            raise CapacityError(
                f"{n}+{n_ref} integrated tokens exceed position table length {self.capacity}"
            )
        pe = self.encode_positions(torch.arange(n))
        q_t = tokens + pe
        kv = torch.cat([kv_gen + pe, kv_ref], dim=1)
        if return_weights:
            out, w = self.attn.attend(q_t, kv, return_weights=True)
            return tokens + out, w
        return tokens + self.attn.attend(q_t, kv)

    def prepare_reference(self, ref_tokens: torch.Tensor, alpha, ref_positions: torch.Tensor) -> torch.Tensor:
        """Position-tag reference tokens and gate them with `alpha`.

        The gate multiplies the whole token (features plus position tag),
        so a fully suppressed reference frame contributes an exactly-zero
        key/value input under bias-free projections.
        """
        return (ref_tokens + self.encode_positions(ref_positions)) * alpha

    def apply_integrated(
        self,
        tokens: torch.Tensor,
        ref_tokens: torch.Tensor,
        alpha,
        ref_positions: torch.Tensor,
        return_weights: bool = False,
    ):
        """Transfer path: queries from the n generation tokens, keys/values
        from generation tokens plus gated position-tagged reference tokens."""
        r_t = self.prepare_reference(ref_tokens, alpha, ref_positions)
        return self.apply_with_kv(tokens, tokens, r_t, return_weights=return_weights)

    # Grid <-> token layout helpers used by the UNet.
    @staticmethod
    def grid_to_tokens(x: torch.Tensor, n: int) -> torch.Tensor:
        """(B*n, C, H, W) -> (B*H*W, n, C)."""
        bn, C, H, W = x.shape
        b = bn // n
        return (
            x.reshape(b, n, C, H * W).permute(0, 3, 1, 2).reshape(b * H * W, n, C)
        )

    @staticmethod
    def tokens_to_grid(tokens: torch.Tensor, n: int, H: int, W: int) -> torch.Tensor:
        """(B*H*W, n, C) -> (B*n, C, H, W)."""
        bhw, _, C = tokens.shape
        b = bhw // (H * W)
        return (
            tokens.reshape(b, H * W, n, C).permute(0, 2, 3, 1).reshape(b * n, C, H, W)
        )


class SpatialAttention(nn.Module):
    """Self-attention over pixel tokens within each frame."""

    def __init__(self, channels: int, head_dim: int, gen: torch.Generator):
        super().__init__()
        self.norm = nn.GroupNorm(_num_groups(channels), channels)
        self.attn = Attention(channels, head_dim, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        bn, C, H, W = x.shape
        t = self.norm(x).reshape(bn, C, H * W).transpose(1, 2)
        return x + self.attn.attend(t, t).transpose(1, 2).reshape(bn, C, H, W)


@dataclass
class InjectionState:
    """Low-level per-forward injection context resolved by the transfer layer.

    gamma maps site id -> (B, h, w, n, c) reference features. When
    `constant_scale` is 0.0 the reference tokens are dropped entirely,
    which reduces the site to its baseline attention bitwise.
    """

    active_sites: tuple[str, ...]
    gamma: dict
    scalers: Optional[nn.ModuleDict] = None
    constant_scale: Optional[float] = None
    position_mode: str = "extended"  # or "aligned"
    scale_maps: Optional[dict] = None  # populated when collecting


class SiteScaler(nn.Module):
    """Per-site gate network: concat(ref, gen) channels -> scale map in [0,1].

    The final conv starts at zero weights with bias 2.0, so a fresh scaler
    emits sigmoid(2.0) ~ 0.8808 everywhere (near-full injection).
    """

    def __init__(self, channels: int, gen: torch.Generator):
        super().__init__()
        hidden = max(1, channels // 2)
        self.conv1 = nn.Conv2d(2 * channels, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, 1, 3, padding=1)
        _init_conv(self.conv1, gen)
        nn.init.zeros_(self.conv2.weight)
        nn.init.constant_(self.conv2.bias, 2.0)

    def forward(self, ref_grid: torch.Tensor, gen_grid: torch.Tensor) -> torch.Tensor:
        """(B*n, C, H, W) x2 -> (B*n, 1, H, W) in [0, 1]."""
        if ref_grid.shape != gen_grid.shape:
            raise ShapeError("reference and generation features must share a shape")
        h = F.silu(self.conv1(torch.cat([ref_grid, gen_grid], dim=1)))
        return torch.sigmoid(self.conv2(h))


def make_scalers(spec: UNetSpec, seed: int = 0) -> nn.ModuleDict:
    """One independent scaler per upsampling injection site."""
    gen = torch.Generator().manual_seed(seed)
    widths = {"up1": spec.widths[-1], "up2": spec.widths[-2], "up3": spec.widths[-3]}
    return nn.ModuleDict({site: SiteScaler(widths[site], gen) for site in UP_SITES})


class VideoUNet(nn.Module):
    def __init__(self, spec: UNetSpec):
        super().__init__()
        self.spec = spec
        gen = torch.Generator().manual_seed(spec.seed)
        w = spec.widths
        E = spec.cond_dim
        P = spec.pos_table_len
        hd = spec.head_dim
        R = spec.res_blocks

        self.time_mlp = nn.Sequential(nn.Linear(E, E), nn.SiLU(), nn.Linear(E, E))
        self.app_emb = nn.Embedding(spec.n_appearance + 1, E)
        self.bg_emb = nn.Embedding(spec.n_background + 1, E)
        for m in (self.time_mlp[0], self.time_mlp[2]):
            _init_linear(m, gen, std=0.02)
        with torch.no_grad():
            self.app_emb.weight.normal_(0.0, 0.02, generator=gen)
            self.bg_emb.weight.normal_(0.0, 0.02, generator=gen)

        self.conv_in = nn.Conv2d(spec.in_channels, w[0], 3, padding=1)
        _init_conv(self.conv_in, gen)

        def res_stack(ci, co):
            blocks = [ResBlock(ci, co, E, gen)]
            blocks += [ResBlock(co, co, E, gen) for _ in range(R - 1)]
            return nn.ModuleList(blocks)

        self.down_res = nn.ModuleList([res_stack(w[0], w[0]), res_stack(w[0], w[1]), res_stack(w[1], w[2])])
        self.down_attn = nn.ModuleList([TemporalAttention(c, hd, P, gen) for c in w])
        self.downsample = nn.ModuleList([nn.Conv2d(c, c, 3, stride=2, padding=1) for c in w])
        for m in self.downsample:
            _init_conv(m, gen)

        self.mid_res1 = ResBlock(w[2], w[2], E, gen)
        self.mid_attn = SpatialAttention(w[2], hd, gen)
        self.mid_res2 = ResBlock(w[2], w[2], E, gen)

        self.up_res = nn.ModuleList(
            [res_stack(w[2] + w[2], w[2]), res_stack(w[2] + w[2], w[1]), res_stack(w[1] + w[1], w[0])]
        )
        self.up_attn = nn.ModuleDict(
            {"up1": TemporalAttention(w[2], hd, P, gen),
             "up2": TemporalAttention(w[1], hd, P, gen),
             "up3": TemporalAttention(w[0], hd, P, gen)}
        )
        self.upsample = nn.ModuleList([nn.Conv2d(c, c, 3, padding=1) for c in (w[2], w[1], w[0])])
        for m in self.upsample:
            _init_conv(m, gen)

        self.head_res = ResBlock(w[0] + w[0], w[0], E, gen)
        self.norm_out = nn.GroupNorm(_num_groups(w[0]), w[0])
        self.conv_out = nn.Conv2d(w[0], spec.in_channels, 3, padding=1)
        _init_conv(self.conv_out, gen, zero=True)

    # ------------------------------------------------------------------

    def _embedding(self, t: torch.Tensor, cond_ids: torch.Tensor) -> torch.Tensor:
        emb = sinusoidal_embedding(t, self.spec.cond_dim).to(self.conv_in.weight.dtype)
        emb = self.time_mlp(emb)
        return emb + self.app_emb(cond_ids[:, 0]) + self.bg_emb(cond_ids[:, 1])

    def _temporal(self, site: str, attn: TemporalAttention, x: torch.Tensor, n: int,
                  injection: Optional[InjectionState], taps: Optional[dict]) -> torch.Tensor:
        bn, C, H, W = x.shape
        if taps is not None and site in UP_SITES:
            taps[site] = (
                x.reshape(bn // n, n, C, H, W).permute(0, 3, 4, 1, 2).detach().clone()
            )
        tokens = TemporalAttention.grid_to_tokens(x, n)
        inject = (
            injection is not None
            and site in injection.active_sites
            and injection.constant_scale != 0.0
        )
        if not inject:
            out = attn.apply_tokens(tokens)
            return TemporalAttention.tokens_to_grid(out, n, H, W)

        gamma = injection.gamma.get(site)
        if gamma is None:
            raise ConfigurationError(f"no reference features provided for site {site!r}")
        B = bn // n
        if tuple(gamma.shape) != (B, H, W, n, C):
            raise ShapeError(
                f"reference features for {site!r} have shape {tuple(gamma.shape)}, "
                f"expected {(B, H, W, n, C)}"
            )
        ref_grid = gamma.permute(0, 3, 4, 1, 2).reshape(bn, C, H, W)
        if injection.constant_scale is not None:
            alpha = injection.constant_scale
            alpha_grid = None
        else:
            if injection.scalers is None or site not in injection.scalers:
                raise ConfigurationError(f"no scaler available for site {site!r}")
            alpha_grid = injection.scalers[site](ref_grid, x)  # (B*n, 1, H, W)
            alpha = TemporalAttention.grid_to_tokens(alpha_grid, n)
        if injection.scale_maps is not None:
            if alpha_grid is None:
                injection.scale_maps[site] = torch.full((B, H, W, n, 1), float(alpha))
            else:
                injection.scale_maps[site] = (
                    alpha_grid.reshape(B, n, 1, H, W).permute(0, 3, 4, 1, 2).detach().clone()
                )
        ref_tokens = TemporalAttention.grid_to_tokens(ref_grid, n)
        if injection.position_mode == "extended":
            ref_positions = torch.arange(n, 2 * n)
        elif injection.position_mode == "aligned":
            ref_positions = torch.arange(n)
        else:
            raise ConfigurationError(f"unknown position mode {injection.position_mode!r}")
        out = attn.apply_integrated(tokens, ref_tokens, alpha, ref_positions)
        return TemporalAttention.tokens_to_grid(out, n, H, W)

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        cond_ids: torch.Tensor,
        injection: Optional[InjectionState] = None,
        collect_taps: bool = False,
    ):
        """x: (B, n, C, H, W), t: (B,) long, cond_ids: (B, 2) long.

        Returns (eps_hat, taps) where taps maps each upsampling site to a
        (B, h, w, n, c) tensor when collect_taps is set, else to nothing.
        """
        if x.ndim != 5:
            raise ShapeError(f"expected (B, n, C, H, W), got {tuple(x.shape)}")
        B, n, C, H, W = x.shape
        div = 2 ** self.spec.levels
        if H % div or W % div:
            raise ShapeError(f"H, W must be divisible by {div} for {self.spec.levels} levels")
        taps: Optional[dict] = {} if collect_taps else None

        emb = self._embedding(t, cond_ids)
        emb = emb.repeat_interleave(n, dim=0)

        h = self.conv_in(x.reshape(B * n, C, H, W))
        skips = []
        res = H
        for i, site in enumerate(DOWN_SITES):
            for block in self.down_res[i]:
                h = block(h, emb)
            h = self._temporal(site, self.down_attn[i], h, n, injection, taps)
            skips.append(h)
            h = self.downsample[i](h)
            res //= 2

        pre_mid = h
        h = self.mid_res1(h, emb)
        h = self.mid_attn(h)
        h = self.mid_res2(h, emb)

        up_inputs = [pre_mid, skips[2], skips[1]]
        for i, site in enumerate(UP_SITES):
            h = torch.cat([h, up_inputs[i]], dim=1)
            for block in self.up_res[i]:
                h = block(h, emb)
            h = self._temporal(site, self.up_attn[site], h, n, injection, taps)
            h = self.upsample[i](F.interpolate(h, scale_factor=2.0, mode="nearest"))
            res *= 2

        h = self.head_res(torch.cat([h, skips[0]], dim=1), emb)
        eps = self.conv_out(F.silu(self.norm_out(h)))
        return eps.reshape(B, n, C, H, W), (taps if collect_taps else {})

    def site_channels(self) -> dict:
        return {site: self.up_attn[site].channels for site in UP_SITES}
