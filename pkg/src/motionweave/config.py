"""Experiment configuration: nested dataclasses, YAML I/O, stable hashing.

Every artifact a command produces embeds the hash of the resolved config
that made it, so mismatched artifacts are detectable downstream.
"""

from __future__ import annotations

import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Optional

import yaml

from .dataset import DatasetConfig
from .errors import ConfigurationError
from .tracking import TrackerConfig
from .unet import UNetSpec


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02


@dataclass(frozen=True)
class OptimConfig:
    base_lr: float = 1e-4
    transfer_lr: float = 5e-5
    grad_clip: float = 1.0
    batch_size: int = 4
    base_steps: int = 20000
    transfer_steps: int = 5000
    p_null: float = 0.1
    log_every: int = 200
    checkpoint_every: int = 2000


@dataclass(frozen=True)
class InjectionSettings:
    t_ref: int = 100
    sites: tuple[str, ...] = ("up1", "up2", "up3")
    position_mode: str = "extended"
    constant_scale: Optional[float] = None
    use_scaler: bool = True


@dataclass(frozen=True)
class EvalSettings:
    ddim_steps: int = 50
    labels_per_motion: int = 5
    guidance_w: float = 1.0
    min_displacement: float = 1.5
    tracker: TrackerConfig = field(default_factory=TrackerConfig)


@dataclass(frozen=True)
class FilterSettings:
    percentile: float = 5.0
    min_motion_fidelity: Optional[float] = None  # set to pin thresholds manually
    min_temporal_consistency: Optional[float] = None


@dataclass(frozen=True)
class Seeds:
    data: int = 1000
    base_train: int = 2000
    transfer_train: int = 3000
    eval: int = 4000
    extraction: int = 5000


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str = "runs/default"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    unet: UNetSpec = field(default_factory=UNetSpec)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    injection: InjectionSettings = field(default_factory=InjectionSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    filter: FilterSettings = field(default_factory=FilterSettings)
    seeds: Seeds = field(default_factory=Seeds)


def _build(cls, data: dict):
    if data is None:
        return cls()
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        ftype = hints.get(f.name)
        if is_dataclass(ftype) and isinstance(value, dict):
            value = _build(ftype, value)
        kwargs[f.name] = value
    extra = set(data) - {f.name for f in fields(cls)}
    if extra:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(extra)}")
    return cls(**kwargs)


def _normalize(obj):
    """Lists from YAML become tuples where the dataclasses expect them."""
    if isinstance(obj, list):
        return tuple(_normalize(v) for v in obj)
    if isinstance(obj, dict):
        return {k: _normalize(v) for k, v in obj.items()}
    return obj


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, _normalize(data or {}))


def load_config(path: str) -> ExperimentConfig:
    with open(path) as f:
        return config_from_dict(yaml.safe_load(f))


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=False)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def clean(obj):
        if isinstance(obj, tuple):
            return [clean(v) for v in obj]
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        return obj

    return clean(asdict(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    payload = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]
