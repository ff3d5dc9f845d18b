"""Paired-motion dataset construction and the line-delimited manifest.

Each sample pairs a reference and a target video that share one motion
program but differ in sprite appearance and/or background. A configurable
fraction of training targets is deliberately corrupted (wrong motion,
shuffled frames, or heavy noise) so the metric filter has real failure
cases to reject, mirroring how generated training data behaves.

Manifest lines are JSON objects with exactly these fields, in order:
id, motion_id, kind, ref_dir, tgt_dir, ref_labels, tgt_labels, split,
metrics, accepted.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ParameterError
from .motions import KINDS, MotionProgram, make_motion_program, most_dissimilar
from .render import (
    SPRITE_OFFSET_UNITS,
    BACKGROUND_POINTS,
    Appearance,
    appearance_from_ids,
    compatible_pairs,
    render_video,
)
from .trajectories import TrajectorySet
from .video import ConditionLabel, Video, load_video, save_video

MANIFEST_FIELDS = (
    "id",
    "motion_id",
    "kind",
    "ref_dir",
    "tgt_dir",
    "ref_labels",
    "tgt_labels",
    "split",
    "metrics",
    "accepted",
)

CORRUPTION_KINDS = ("frame_shuffle", "motion_mismatch", "heavy_noise")


@dataclass(frozen=True)
class SampleRecord:
    id: str
    motion_id: str
    kind: str
    ref_dir: str
    tgt_dir: str
    ref_labels: ConditionLabel
    tgt_labels: ConditionLabel
    split: str
    metrics: Optional[dict] = None
    accepted: Optional[bool] = None
    corruption: Optional[str] = None  # transient; never serialized

    def to_line(self) -> str:
        obj = {
            "id": self.id,
            "motion_id": self.motion_id,
            "kind": self.kind,
            "ref_dir": self.ref_dir,
            "tgt_dir": self.tgt_dir,
            "ref_labels": _label_dict(self.ref_labels),
            "tgt_labels": _label_dict(self.tgt_labels),
            "split": self.split,
            "metrics": _round_metrics(self.metrics),
            "accepted": self.accepted,
        }
        return json.dumps(obj, separators=(", ", ": "))

    @classmethod
    def from_line(cls, line: str) -> "SampleRecord":
        obj = json.loads(line)
        missing = set(MANIFEST_FIELDS) - set(obj)
        if missing:
            raise ConfigurationError(f"manifest line missing fields: {sorted(missing)}")
        return cls(
            id=obj["id"],
            motion_id=obj["motion_id"],
            kind=obj["kind"],
            ref_dir=obj["ref_dir"],
            tgt_dir=obj["tgt_dir"],
            ref_labels=_label_from_dict(obj["ref_labels"]),
            tgt_labels=_label_from_dict(obj["tgt_labels"]),
            split=obj["split"],
            metrics=obj["metrics"],
            accepted=obj["accepted"],
        )


def _label_dict(label: ConditionLabel) -> dict:
    return {"appearance_id": label.appearance_id, "background_id": label.background_id}


def _label_from_dict(d: dict) -> ConditionLabel:
    return ConditionLabel(d["appearance_id"], d["background_id"])


def _round_metrics(metrics: Optional[dict]) -> Optional[dict]:
    if metrics is None:
        return None
    return {k: round(float(v), 6) for k, v in metrics.items()}


def write_manifest(records, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        for r in records:
            f.write(r.to_line() + "\n")


def read_manifest(path: str) -> list[SampleRecord]:
    with open(path) as f:
        return [SampleRecord.from_line(line) for line in f if line.strip()]


# ----------------------------------------------------------------------
# Pair generation


@dataclass(frozen=True)
class PairSample:
    """In-memory paired sample before anything touches disk."""

    ref: Video
    tgt: Video
    gt_ref: TrajectorySet
    gt_tgt: TrajectorySet
    program: MotionProgram
    look_ref: Appearance
    look_tgt: Appearance


def generate_pair(
    program: MotionProgram,
    look_ref: Appearance,
    look_tgt: Appearance,
    res: tuple[int, int] = (32, 32),
    seed: int = 0,
) -> PairSample:
    """Render two videos of the same motion with different looks.

    Both videos share the exact ground-truth track points (sprite offsets
    sized to the smaller sprite, identical background anchor points), so
    their per-point velocity sequences agree to machine precision.
    """
    if look_ref == look_tgt:
        raise ParameterError("paired looks must differ in at least one field")
    rng = np.random.default_rng(seed)
    half_world = min(look_ref.sprite_size, look_tgt.sprite_size) / 2.0 / res[1]
    offsets = SPRITE_OFFSET_UNITS * half_world
    bg_points = BACKGROUND_POINTS + rng.uniform(-0.02, 0.02, size=BACKGROUND_POINTS.shape)
    ref, gt_ref = render_video(program, look_ref, res, sprite_offsets=offsets, bg_points=bg_points)
    tgt, gt_tgt = render_video(program, look_tgt, res, sprite_offsets=offsets, bg_points=bg_points)
    return PairSample(
        ref=ref, tgt=tgt, gt_ref=gt_ref, gt_tgt=gt_tgt,
        program=program, look_ref=look_ref, look_tgt=look_tgt,
    )


# ----------------------------------------------------------------------
# Corruption


def corrupt_sample(
    record: SampleRecord,
    kind: str,
    seed: int,
    registry: dict,
    root: str,
    in_place: bool = False,
) -> SampleRecord:
    """Replace a record's target with a synthetic failure case.

    frame_shuffle permutes the target frames (an identity draw returns
    the record unchanged, flagged as non-corrupted); motion_mismatch
    re-renders the target under the most dissimilar same-split program;
    heavy_noise adds sigma=0.5 pixel noise.
    """
    if kind not in CORRUPTION_KINDS:
        raise ParameterError(f"unknown corruption kind {kind!r}")
    rng = np.random.default_rng(seed)
    tgt = load_video(os.path.join(root, record.tgt_dir))

    if kind == "frame_shuffle":
        perm = rng.permutation(tgt.n_frames)
        if np.array_equal(perm, np.arange(tgt.n_frames)):
            return replace(record, corruption=None)
        corrupted = Video(data=tgt.data[perm], frame_rate=tgt.frame_rate)
    elif kind == "heavy_noise":
        noisy = tgt.data + rng.normal(0.0, 0.5, size=tgt.data.shape).astype(np.float32)
        corrupted = Video(data=np.clip(noisy, -1.0, 1.0), frame_rate=tgt.frame_rate)
    else:  # motion_mismatch
        if record.motion_id not in registry:
            raise ConfigurationError(f"motion {record.motion_id!r} missing from the registry")
        own_split = registry[record.motion_id][1]
        pool = {
            mid: prog
            for mid, (prog, split) in registry.items()
            if split == own_split and mid != record.motion_id
        }
        if not pool:
            raise ConfigurationError("no donor programs available for motion_mismatch")
        donor_id = most_dissimilar(registry[record.motion_id][0], pool)
        look = appearance_from_ids(
            record.tgt_labels.appearance_id, record.tgt_labels.background_id
        )
        corrupted, _ = render_video(pool[donor_id], look, res=tgt.resolution)

    out_rel = record.tgt_dir if in_place else record.tgt_dir + f"__{kind}"
    save_video(corrupted, os.path.join(root, out_rel))
    return replace(record, tgt_dir=out_rel, metrics=None, accepted=None, corruption=kind)


# ----------------------------------------------------------------------
# Dataset build


@dataclass(frozen=True)
class DatasetConfig:
    res: tuple[int, int] = (32, 32)
    n_frames: int = 8
    kinds: tuple[str, ...] = KINDS
    train_programs: int = 31
    test_programs: int = 20
    pairs_per_program: int = 7
    calib_pairs: int = 40
    corrupt_fraction: float = 0.18
    seed: int = 0

    def __post_init__(self):
        bad = set(self.kinds) - set(KINDS)
        if bad:
            raise ParameterError(f"unknown motion kinds: {sorted(bad)}")
        if self.train_programs < 1 or self.test_programs < 1:
            raise ParameterError("need at least one program per split")


def _draw_label(rng: np.random.Generator, pool: list) -> ConditionLabel:
    aid, bid = pool[int(rng.integers(len(pool)))]
    return ConditionLabel(aid, bid)


def _draw_distinct_label(rng: np.random.Generator, pool: list, other: ConditionLabel) -> ConditionLabel:
    for _ in range(64):
        lab = _draw_label(rng, pool)
        if lab != other:
            return lab
    raise ConfigurationError("could not draw a distinct target look")


def save_registry(programs: dict, path: str) -> None:
    obj = {
        mid: {
            "kind": prog.kind,
            "n": prog.n,
            "seed": prog.seed,
            "params": {k: float(v) for k, v in sorted(prog.params.items())},
            "split": split,
        }
        for mid, (prog, split) in programs.items()
    }
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)


def load_registry(path: str) -> dict:
    with open(path) as f:
        obj = json.load(f)
    out = {}
    for mid, d in obj.items():
        prog = MotionProgram(kind=d["kind"], params=d["params"], n=d["n"], seed=d["seed"])
        out[mid] = (prog, d["split"])
    return out


@dataclass
class DatasetStats:
    train_pairs: int = 0
    corrupted: int = 0
    calib_pairs: int = 0
    test_pairs: int = 0
    corruption_kinds: dict = field(default_factory=dict)


def build_dataset(cfg: DatasetConfig, root: str) -> tuple[str, DatasetStats]:
    """Render all pairs and write manifest.jsonl plus programs.json.

    Deterministic in (cfg, seed): rebuilding yields byte-identical
    artifacts. Held-out (test) programs never appear in training pairs;
    a leakage check enforces disjoint motion-id sets.
    """
    rng = np.random.default_rng(cfg.seed)
    pool = compatible_pairs()
    n = cfg.n_frames

    programs: dict = {}
    for i in range(cfg.train_programs):
        kind = cfg.kinds[i % len(cfg.kinds)]
        programs[f"m{i:03d}"] = (
            make_motion_program(kind, None, n, seed=int(rng.integers(2**31))),
            "train",
        )
    for i in range(cfg.test_programs):
        kind = cfg.kinds[i % len(cfg.kinds)]
        programs[f"t{i:03d}"] = (
            make_motion_program(kind, None, n, seed=int(rng.integers(2**31))),
            "test",
        )
    train_ids = sorted(mid for mid, (_, s) in programs.items() if s == "train")
    test_ids = sorted(mid for mid, (_, s) in programs.items() if s == "test")
    if set(train_ids) & set(test_ids):
        raise ConfigurationError("train/test motion-id sets overlap")

    os.makedirs(root, exist_ok=True)
    records: list[SampleRecord] = []
    stats = DatasetStats()

    total_train = cfg.train_programs * cfg.pairs_per_program
    n_corrupt = int(round(cfg.corrupt_fraction * total_train))
    corrupt_idx = set(rng.choice(total_train, size=n_corrupt, replace=False).tolist())
    corrupt_kind_draws = rng.choice(
        CORRUPTION_KINDS, size=n_corrupt, p=[0.2, 0.6, 0.2]
    ).tolist()

    def emit(sample_id, mid, split, pair_seed):
        prog, _ = programs[mid]
        ref_lab = _draw_label(rng, pool)
        tgt_lab = _draw_distinct_label(rng, pool, ref_lab)
        pair = generate_pair(
            prog,
            appearance_from_ids(ref_lab.appearance_id, ref_lab.background_id),
            appearance_from_ids(tgt_lab.appearance_id, tgt_lab.background_id),
            res=cfg.res,
            seed=pair_seed,
        )
        ref_dir = f"videos/{sample_id}/ref"
        tgt_dir = f"videos/{sample_id}/tgt"
        save_video(pair.ref, os.path.join(root, ref_dir))
        save_video(pair.tgt, os.path.join(root, tgt_dir))
        return SampleRecord(
            id=sample_id, motion_id=mid, kind=prog.kind,
            ref_dir=ref_dir, tgt_dir=tgt_dir,
            ref_labels=ref_lab, tgt_labels=tgt_lab, split=split,
        )

    flat = 0
    for mid in train_ids:
        for _ in range(cfg.pairs_per_program):
            rec = emit(f"s{flat:04d}", mid, "train", pair_seed=int(rng.integers(2**31)))
            if flat in corrupt_idx:
                ckind = corrupt_kind_draws[sorted(corrupt_idx).index(flat)]
                rec = corrupt_sample(
                    rec, ckind, seed=int(rng.integers(2**31)),
                    registry=programs, root=root, in_place=True,
                )
                if rec.corruption:
                    stats.corrupted += 1
                    stats.corruption_kinds[ckind] = stats.corruption_kinds.get(ckind, 0) + 1
            records.append(rec)
            stats.train_pairs += 1
            flat += 1

    for j in range(cfg.calib_pairs):
        mid = train_ids[j % len(train_ids)]
        records.append(emit(f"c{j:04d}", mid, "calib", pair_seed=int(rng.integers(2**31))))
        stats.calib_pairs += 1

    for mid in test_ids:
        records.append(emit(f"e_{mid}", mid, "test", pair_seed=int(rng.integers(2**31))))
        stats.test_pairs += 1

    save_registry(programs, os.path.join(root, "programs.json"))
    manifest = os.path.join(root, "manifest.jsonl")
    write_manifest(records, manifest)
    return manifest, stats
