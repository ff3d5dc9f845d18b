"""Named parameter groups with content hashes and finetune scoping.

Groups partition every parameter of a model (plus optional per-site
scalers). Weight and bias of one submodule share a group; each scaler is
a single group. Content hashes make freeze contracts checkable: a group's
hash changes iff any of its tensor values changed.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Iterable, Optional

import torch
from torch import nn

from .errors import ConfigurationError
from .unet import UP_SITES, VideoUNet

_SUFFIX = re.compile(r"\.(weight|bias)$")

PROJECTIONS = ("w_q", "w_k", "w_v")


def projection_group(site: str, which: str) -> str:
    return f"up_attn.{site}.attn.{which}"


def scaler_group(site: str) -> str:
    return f"scaler.{site}"


def collect_param_groups(model: nn.Module, scalers: Optional[nn.ModuleDict] = None) -> dict:
    """Ordered mapping group name -> list of parameter tensors."""
    groups: dict[str, list[torch.Tensor]] = {}
    for name, p in model.named_parameters():
        groups.setdefault(_SUFFIX.sub("", name), []).append(p)
    if scalers is not None:
        for site, module in scalers.items():
            key = scaler_group(site)
            groups[key] = [p for _, p in sorted(module.named_parameters())]
    return groups


def _hash_tensors(tensors: Iterable[torch.Tensor]) -> str:
    h = hashlib.sha256()
    for t in tensors:
        arr = t.detach().cpu().contiguous()
        h.update(str(tuple(arr.shape)).encode())
        h.update(arr.numpy().tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class ParamGroup:
    trainable: bool
    content_hash: str


@dataclass(frozen=True)
class ParamSet:
    """Snapshot of all parameter groups with trainable flags and hashes."""

    groups: dict  # name -> ParamGroup

    def trainable_names(self) -> set[str]:
        return {k for k, g in self.groups.items() if g.trainable}

    def changed_since(self, other: "ParamSet") -> set[str]:
        """Names whose content hash differs from `other` (same partition)."""
        if set(self.groups) != set(other.groups):
            raise ConfigurationError("param sets cover different group partitions")
        return {k for k in self.groups if self.groups[k].content_hash != other.groups[k].content_hash}


def snapshot_params(
    model: nn.Module,
    scalers: Optional[nn.ModuleDict] = None,
    trainable: Optional[set[str]] = None,
) -> ParamSet:
    groups = collect_param_groups(model, scalers)
    trainable = trainable or set()
    return ParamSet(
        groups={
            name: ParamGroup(trainable=name in trainable, content_hash=_hash_tensors(ts))
            for name, ts in groups.items()
        }
    )


def trainable_param_set(
    model: VideoUNet,
    scalers: Optional[nn.ModuleDict] = None,
    sites: Optional[Iterable[str]] = None,
) -> ParamSet:
    """Mark exactly the transfer-finetuned groups as trainable.

    Trainable: the query/key/value projections of each upsampling
    temporal-attention site plus each site's scaler. Output projections
    and everything else stay frozen.
    """
    sites = tuple(sites) if sites is not None else UP_SITES
    unknown = set(sites) - set(UP_SITES)
    if unknown:
        raise ConfigurationError(f"unknown injection sites: {sorted(unknown)}")
    names = {projection_group(s, p) for s in sites for p in PROJECTIONS}
    if scalers is not None:
        names |= {scaler_group(s) for s in sites if s in scalers}
    return snapshot_params(model, scalers, trainable=names)


def apply_trainable(
    model: nn.Module, scalers: Optional[nn.ModuleDict], pset: ParamSet
) -> list[torch.Tensor]:
    """Set requires_grad per group; returns the trainable tensors in a
    fixed (name-sorted) order for optimizer construction."""
    groups = collect_param_groups(model, scalers)
    missing = set(pset.groups) ^ set(groups)
    if missing:
        raise ConfigurationError(f"param set does not match model groups: {sorted(missing)}")
    tensors = []
    for name in sorted(groups):
        flag = pset.groups[name].trainable
        for p in groups[name]:
            p.requires_grad_(flag)
        if flag:
            tensors.extend(groups[name])
    return tensors
