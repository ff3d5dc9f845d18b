"""Tensor-archive serialization for checkpoints and reference features.

Archive layout (all integers little-endian):

    bytes 0..7     magic  b"MWTA0001"
    bytes 8..15    uint64 manifest length in bytes
    manifest       UTF-8 JSON: format, kind, spec (full architecture
                   fields), schedule, spec_hash, meta, and a tensor index
                   [{name, dtype, shape, offset, nbytes}, ...]
    payload        raw tensor bytes, back to back, in index order

Model and optimizer tensors are stored as little-endian float32; RNG
states ride along as uint8 blobs. Loading verifies the recorded spec hash
against the manifest contents and, when the caller provides one, against
the expected architecture.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

from .errors import ConfigurationError
from .schedule import NoiseSchedule, make_schedule
from .unet import UNetSpec, VideoUNet, make_scalers

MAGIC = b"MWTA0001"

_DTYPES = {"f4": np.dtype("<f4"), "u1": np.dtype("u1"), "i8": np.dtype("<i8")}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def spec_fingerprint(spec: UNetSpec, schedule: Optional[dict] = None) -> str:
    """Stable hash of the architecture (and optionally schedule) config."""
    payload = {"unet": asdict(spec)}
    if schedule is not None:
        payload["schedule"] = schedule
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


def save_archive(path: str, tensors: dict, manifest_extra: dict) -> None:
    """Write named arrays plus manifest metadata to `path`."""
    index = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        if isinstance(arr, torch.Tensor):
            arr = arr.detach().cpu().contiguous().numpy()
        if arr.dtype == np.uint8:
            code = "u1"
        elif arr.dtype in (np.int64, np.dtype("<i8")):
            code = "i8"
        else:
            code = "f4"
        raw = np.ascontiguousarray(arr.astype(_DTYPES[code], copy=False)).tobytes()
        index.append(
            {"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = dict(manifest_extra)
    manifest["format"] = "mwta-1"
    manifest["tensors"] = index
    mbytes = canonical_json(manifest).encode()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(mbytes).to_bytes(8, "little"))
        f.write(mbytes)
        for raw in blobs:
            f.write(raw)


def load_archive(path: str):
    """Read an archive; returns (tensors: dict[str, np.ndarray], manifest)."""
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ConfigurationError(f"{path} is not a tensor archive")
        mlen = int.from_bytes(f.read(8), "little")
        manifest = json.loads(f.read(mlen).decode())
        payload = f.read()
    tensors = {}
    for entry in manifest["tensors"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr
    return tensors, manifest


# ----------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    """In-memory view of a model checkpoint."""

    spec: UNetSpec
    schedule: NoiseSchedule
    model: VideoUNet
    scalers: Optional[torch.nn.ModuleDict]
    meta: dict = field(default_factory=dict)
    opt_tensors: dict = field(default_factory=dict)
    rng_states: dict = field(default_factory=dict)

    @property
    def weights_hash(self) -> str:
        h = hashlib.sha256()
        for _, p in sorted(self.model.named_parameters()):
            h.update(p.detach().cpu().contiguous().numpy().astype("<f4").tobytes())
        return h.hexdigest()


def model_weights_hash(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for _, p in sorted(model.named_parameters()):
        h.update(p.detach().cpu().contiguous().numpy().astype("<f4").tobytes())
    return h.hexdigest()


def _schedule_dict(schedule: NoiseSchedule) -> dict:
    return {
        "T": schedule.T,
        "beta_min": float(schedule.betas[0]),
        "beta_max": float(schedule.betas[-1]),
    }


def save_checkpoint(
    path: str,
    model: VideoUNet,
    schedule: NoiseSchedule,
    scalers: Optional[torch.nn.ModuleDict] = None,
    meta: Optional[dict] = None,
    opt_tensors: Optional[dict] = None,
    rng_states: Optional[dict] = None,
) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if scalers is not None:
        tensors.update({f"scaler.{k}": v for k, v in scalers.state_dict().items()})
    for k, v in (opt_tensors or {}).items():
        tensors[f"opt.{k}"] = v
    for k, v in (rng_states or {}).items():
        tensors[f"rng.{k}"] = v
    sched = _schedule_dict(schedule)
    manifest = {
        "kind": "checkpoint",
        "spec": asdict(model.spec),
        "schedule": sched,
        "spec_hash": spec_fingerprint(model.spec, sched),
        "has_scalers": scalers is not None,
        "meta": meta or {},
    }
    save_archive(path, tensors, manifest)


def load_checkpoint(path: str, expect_spec: Optional[UNetSpec] = None) -> Checkpoint:
    tensors, manifest = load_archive(path)
    if manifest.get("kind") != "checkpoint":
        raise ConfigurationError(f"{path} is not a checkpoint archive")
    spec_dict = dict(manifest["spec"])
    spec_dict["widths"] = tuple(spec_dict["widths"])
    spec = UNetSpec(**spec_dict)
    sched = manifest["schedule"]
    recorded = manifest["spec_hash"]
    recomputed = spec_fingerprint(spec, sched)
    if recorded != recomputed:
        raise ConfigurationError(f"{path}: spec hash mismatch (corrupt or edited archive)")
    if expect_spec is not None and spec != expect_spec:
        raise ConfigurationError(f"{path}: checkpoint architecture differs from the requested spec")
    schedule = make_schedule(sched["T"], sched["beta_min"], sched["beta_max"])

    model = VideoUNet(spec)
    model.load_state_dict(
        {k[len("model.") :]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("model.")}
    )
    scalers = None
    if manifest.get("has_scalers"):
        scalers = make_scalers(spec)
        scalers.load_state_dict(
            {k[len("scaler.") :]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("scaler.")}
        )
    opt = {k[len("opt.") :]: v for k, v in tensors.items() if k.startswith("opt.")}
    rng = {k[len("rng.") :]: v for k, v in tensors.items() if k.startswith("rng.")}
    return Checkpoint(
        spec=spec,
        schedule=schedule,
        model=model,
        scalers=scalers,
        meta=manifest.get("meta", {}),
        opt_tensors=opt,
        rng_states=rng,
    )
