"""Experiment orchestration: data build, training, sampling, evaluation,
and the ablation matrix. Every artifact embeds the producing config hash.

All commands are deterministic functions of (config, seed) when run in
the default single-threaded mode.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

from .checkpoint import (
    Checkpoint,
    load_checkpoint,
    model_weights_hash,
    save_checkpoint,
)
from .config import ExperimentConfig, config_hash
from .dataset import build_dataset, read_manifest, write_manifest
from .errors import ConfigurationError, NumericError, ParameterError
from .filtering import FilterThresholds, calibrate_thresholds, ensure_metrics, filter_manifest
from .metrics import (
    TemplateBank,
    condition_alignment,
    temporal_consistency,
    tracked_motion_fidelity,
)
from .params import apply_trainable, snapshot_params, trainable_param_set
from .render import compatible_pairs
from .sampling import ddim_sample
from .schedule import NoiseSchedule, make_schedule
from .training import base_training_step, make_optimizer, transfer_training_step
from .transfer import InjectionConfig, build_injection_state, extract_reference_features
from .unet import VideoUNet, make_scalers
from .video import ConditionLabel, Video, load_video, save_video


def configure_runtime(threads: int = 1) -> None:
    """Single-threaded by default: required for bit-reproducible runs."""
    torch.set_num_threads(threads)


def _schedule_from(cfg: ExperimentConfig) -> NoiseSchedule:
    return make_schedule(cfg.schedule.T, cfg.schedule.beta_min, cfg.schedule.beta_max)


def _dataset_root(cfg: ExperimentConfig) -> str:
    return os.path.join(cfg.out_dir, "dataset")


def _load_videos(records, root: str, which: str) -> torch.Tensor:
    vids = [load_video(os.path.join(root, getattr(r, which))) for r in records]
    return torch.from_numpy(np.stack([v.data for v in vids]))


def _cond_ids(records, which: str) -> torch.Tensor:
    labs = [getattr(r, which) for r in records]
    return torch.tensor([[l.appearance_id, l.background_id] for l in labs], dtype=torch.long)


# ----------------------------------------------------------------------
# gen-data


def cmd_gen_data(cfg: ExperimentConfig) -> str:
    """Build the dataset; idempotent per (config, seed)."""
    configure_runtime()
    root = _dataset_root(cfg)
    manifest = os.path.join(root, "manifest.jsonl")
    stamp = os.path.join(root, "config_hash.txt")
    h = config_hash(cfg)
    if os.path.exists(manifest) and os.path.exists(stamp):
        if open(stamp).read().strip() == h:
            return manifest
    manifest, stats = build_dataset(cfg.dataset, root)
    with open(stamp, "w") as f:
        f.write(h + "\n")
    with open(os.path.join(root, "build_stats.json"), "w") as f:
        json.dump({"config_hash": h, **asdict(stats)}, f, indent=1, sort_keys=True)
    return manifest


def prepare_filtered_manifest(cfg: ExperimentConfig, force_recompute: bool = False) -> str:
    """Score train pairs, calibrate thresholds on the calib pool, and write
    manifest.filtered.jsonl plus the filter report."""
    root = _dataset_root(cfg)
    out_path = os.path.join(root, "manifest.filtered.jsonl")
    if os.path.exists(out_path) and not force_recompute:
        return out_path
    records = read_manifest(os.path.join(root, "manifest.jsonl"))
    tracker = cfg.eval.tracker
    mind = cfg.eval.min_displacement
    calib = ensure_metrics([r for r in records if r.split == "calib"], root, tracker, mind)
    if cfg.filter.min_motion_fidelity is not None and cfg.filter.min_temporal_consistency is not None:
        thresholds = FilterThresholds(
            cfg.filter.min_motion_fidelity, cfg.filter.min_temporal_consistency
        )
    else:
        thresholds = calibrate_thresholds(calib, cfg.filter.percentile)
    train = [r for r in records if r.split == "train"]
    filtered, report = filter_manifest(train, thresholds, root, tracker, mind)
    others = calib + [r for r in records if r.split == "test"]
    write_manifest(filtered + others, out_path)
    with open(os.path.join(root, "filter_report.txt"), "w") as f:
        f.write(report.render_text() + "\n")
    with open(os.path.join(root, "filter_thresholds.json"), "w") as f:
        json.dump(asdict(thresholds), f, indent=1)
    return out_path


# ----------------------------------------------------------------------
# Optimizer (de)serialization for exact resume


def _named_params(model: torch.nn.Module, scalers=None) -> list:
    items = sorted(model.named_parameters())
    if scalers is not None:
        items += [(f"scaler.{k}", p) for k, p in sorted(scalers.named_parameters())]
    return items


def _opt_state_tensors(optimizer: torch.optim.Optimizer, params: list) -> tuple[dict, list]:
    tensors, steps = {}, []
    for i, p in enumerate(params):
        st = optimizer.state.get(p)
        if st is None:
            steps.append(0.0)
            continue
        tensors[f"{i}.exp_avg"] = st["exp_avg"]
        tensors[f"{i}.exp_avg_sq"] = st["exp_avg_sq"]
        steps.append(float(st["step"]))
    return tensors, steps


def _restore_opt_state(optimizer, params: list, tensors: dict, steps: list) -> None:
    for i, p in enumerate(params):
        key = f"{i}.exp_avg"
        if key not in tensors:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(steps[i]),
            "exp_avg": torch.from_numpy(tensors[key]).clone(),
            "exp_avg_sq": torch.from_numpy(tensors[f"{i}.exp_avg_sq"]).clone(),
        }


# ----------------------------------------------------------------------
# train-base


def cmd_train_base(
    cfg: ExperimentConfig,
    steps: Optional[int] = None,
    resume_from: Optional[str] = None,
    out_name: str = "base.ckpt",
) -> str:
    """Train the base model on all training target videos.

    Logs the loss every `log_every` steps, keeps a rolling last-good
    checkpoint, and aborts with a pointer to it on numeric divergence.
    Resuming from a checkpoint continues bit-identically.
    """
    configure_runtime()
    root = _dataset_root(cfg)
    manifest = os.path.join(root, "manifest.jsonl")
    if not os.path.exists(manifest):
        raise ParameterError("dataset not built; run gen-data first")
    records = [r for r in read_manifest(manifest) if r.split == "train"]
    videos = _load_videos(records, root, "tgt_dir")
    cond = _cond_ids(records, "tgt_labels")
    schedule = _schedule_from(cfg)
    total = steps if steps is not None else cfg.optim.base_steps

    rng = torch.Generator()
    losses: list[float] = []
    start = 0
    if resume_from:
        ck = load_checkpoint(resume_from, expect_spec=cfg.unet)
        model = ck.model
        params = [p for _, p in _named_params(model)]
        opt = make_optimizer(params, cfg.optim.base_lr)
        _restore_opt_state(opt, params, ck.opt_tensors, ck.meta["opt_steps"])
        rng.set_state(torch.from_numpy(ck.rng_states["train"]))
        start = int(ck.meta["step"])
        losses = list(ck.meta.get("loss_tail", []))
    else:
        model = VideoUNet(cfg.unet)
        params = [p for _, p in _named_params(model)]
        opt = make_optimizer(params, cfg.optim.base_lr)
        rng.manual_seed(cfg.seeds.base_train)

    ckpt_dir = os.path.join(cfg.out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    out_path = os.path.join(ckpt_dir, out_name)
    last_good = None

    def save(path, step):
        opt_tensors, opt_steps = _opt_state_tensors(opt, params)
        save_checkpoint(
            path, model, schedule,
            meta={
                "kind": "base",
                "config_hash": config_hash(cfg),
                "step": step,
                "p_null": cfg.optim.p_null,
                "opt_steps": opt_steps,
                "loss_tail": losses[-50:],
            },
            opt_tensors=opt_tensors,
            rng_states={"train": rng.get_state()},
        )

    B = cfg.optim.batch_size
    N = videos.shape[0]
    try:
        for step in range(start, total):
            idx = torch.randint(0, N, (B,), generator=rng)
            loss = base_training_step(
                model, videos[idx], cond[idx], schedule, opt, rng,
                p_null=cfg.optim.p_null, grad_clip=cfg.optim.grad_clip,
            )
            losses.append(loss)
            if (step + 1) % cfg.optim.log_every == 0:
                print(f"[train-base] step {step + 1}/{total} loss {loss:.5f}", flush=True)
            if (step + 1) % cfg.optim.checkpoint_every == 0 and step + 1 < total:
                save(out_path + ".partial", step + 1)
                last_good = out_path + ".partial"
    except NumericError as err:
        raise NumericError(
            f"{err} (last good checkpoint: {last_good or 'none'})"
        ) from err

    save(out_path, total)
    np.save(os.path.join(ckpt_dir, out_name + ".losses.npy"), np.array(losses, dtype=np.float32))
    return out_path


# ----------------------------------------------------------------------
# train-transfer


def cmd_train_transfer(
    cfg: ExperimentConfig,
    base_ckpt: str,
    sites: Optional[tuple[str, ...]] = None,
    use_scaler: Optional[bool] = None,
    no_filter: bool = False,
    steps: Optional[int] = None,
    out_name: str = "transfer_full.ckpt",
) -> str:
    """Finetune the upsampling QKV projections (and scalers) on accepted
    pairs; writes the checkpoint plus a param-group change report."""
    configure_runtime()
    root = _dataset_root(cfg)
    sites = tuple(sites) if sites is not None else tuple(cfg.injection.sites)
    use_scaler = cfg.injection.use_scaler if use_scaler is None else use_scaler

    if no_filter:
        records = [r for r in read_manifest(os.path.join(root, "manifest.jsonl")) if r.split == "train"]
    else:
        filtered = prepare_filtered_manifest(cfg)
        records = [
            r for r in read_manifest(filtered) if r.split == "train" and r.accepted
        ]
    if not records:
        raise ParameterError("no training pairs available")

    x_ref = _load_videos(records, root, "ref_dir")
    x_tgt = _load_videos(records, root, "tgt_dir")
    cond = _cond_ids(records, "tgt_labels")
    schedule = _schedule_from(cfg)

    base = load_checkpoint(base_ckpt, expect_spec=cfg.unet)
    model = base.model
    extractor = load_checkpoint(base_ckpt, expect_spec=cfg.unet).model
    extractor.eval()
    for p in extractor.parameters():
        p.requires_grad_(False)

    scalers = make_scalers(cfg.unet, seed=cfg.seeds.transfer_train) if use_scaler else None
    inj_cfg = InjectionConfig(
        active_sites=sites,
        position_mode=cfg.injection.position_mode,
        constant_scale_override=None if use_scaler else 1.0,
    )
    pset = trainable_param_set(model, scalers, sites=sites)
    trainable = apply_trainable(model, scalers, pset)
    before = snapshot_params(model, scalers, trainable=pset.trainable_names())
    opt = make_optimizer(trainable, cfg.optim.transfer_lr)
    rng = torch.Generator().manual_seed(cfg.seeds.transfer_train)

    total = steps if steps is not None else cfg.optim.transfer_steps
    B = cfg.optim.batch_size
    N = x_ref.shape[0]
    losses = []
    for step in range(total):
        idx = torch.randint(0, N, (B,), generator=rng)
        loss = transfer_training_step(
            model, scalers, extractor, x_ref[idx], x_tgt[idx], cond[idx],
            inj_cfg, schedule, opt, rng,
            t_ref=cfg.injection.t_ref, grad_clip=cfg.optim.grad_clip,
        )
        losses.append(loss)
        if (step + 1) % cfg.optim.log_every == 0:
            print(f"[train-transfer:{out_name}] step {step + 1}/{total} loss {loss:.5f}", flush=True)

    after = snapshot_params(model, scalers, trainable=pset.trainable_names())
    changed = after.changed_since(before)
    trainable_names = pset.trainable_names()
    change_report = {
        "trainable": sorted(trainable_names),
        "changed": sorted(changed),
        "frozen_changed": sorted(changed - trainable_names),
        "trainable_unchanged": sorted(trainable_names - changed),
        "n_pairs": N,
        "no_filter": no_filter,
    }

    ckpt_dir = os.path.join(cfg.out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    out_path = os.path.join(ckpt_dir, out_name)
    save_checkpoint(
        out_path, model, schedule, scalers=scalers,
        meta={
            "kind": "transfer",
            "config_hash": config_hash(cfg),
            "step": total,
            "p_null": base.meta.get("p_null", cfg.optim.p_null),
            "sites": list(sites),
            "use_scaler": use_scaler,
            "position_mode": cfg.injection.position_mode,
            "base_weights_hash": model_weights_hash(extractor),
            "loss_tail": losses[-50:],
        },
    )
    with open(out_path + ".changes.json", "w") as f:
        json.dump(change_report, f, indent=1, sort_keys=True)
    np.save(out_path + ".losses.npy", np.array(losses, dtype=np.float32))
    return out_path


# ----------------------------------------------------------------------
# sample


def cmd_sample(
    cfg: ExperimentConfig,
    ckpt_path: str,
    ref_dir: str,
    cond: ConditionLabel,
    out_dir: str,
    base_ckpt: Optional[str] = None,
    seed: Optional[int] = None,
    t_ref: Optional[int] = None,
    sites: Optional[tuple[str, ...]] = None,
    scale_const: Optional[float] = None,
    position_mode: Optional[str] = None,
    gif: bool = False,
) -> dict:
    """Capture one new reference motion and generate a video for `cond`.

    No optimization runs: the cost is one extractor pass plus DDIM
    sampling, and the returned timing report splits the two phases.
    """
    configure_runtime()
    ck = load_checkpoint(ckpt_path, expect_spec=cfg.unet)
    extractor_ck = load_checkpoint(base_ckpt, expect_spec=cfg.unet) if base_ckpt else ck
    extractor = extractor_ck.model
    extractor.eval()
    for p in extractor.parameters():
        p.requires_grad_(False)

    schedule = ck.schedule
    ref = load_video(ref_dir)
    t_ref = t_ref if t_ref is not None else cfg.injection.t_ref
    seed = seed if seed is not None else cfg.seeds.eval

    t0 = time.perf_counter()
    gamma = extract_reference_features(
        extractor, ref, t_ref, noise_seed=cfg.seeds.extraction, schedule=schedule
    )
    t1 = time.perf_counter()

    inj_cfg = _injection_from_meta(
        cfg, ck, sites=sites, scale_const=scale_const, position_mode=position_mode
    )
    injection = None
    if inj_cfg is not None and inj_cfg.constant_scale_override != 0.0:
        injection = build_injection_state(gamma, inj_cfg, ck.scalers, batch=1)
    n, c, H, W = ref.data.shape
    x = ddim_sample(
        ck.model,
        torch.tensor([[cond.appearance_id, cond.background_id]]),
        schedule,
        (n, c, H, W),
        steps=cfg.eval.ddim_steps,
        guidance_w=cfg.eval.guidance_w,
        seed=seed,
        injection=injection,
        null_conditioning_trained=ck.meta.get("p_null", 0.0) > 0.0,
    )
    t2 = time.perf_counter()

    video = Video(data=x[0].numpy())
    save_video(video, out_dir, gif=gif)
    timing = {
        "gamma_extraction_s": t1 - t0,
        "sampling_s": t2 - t1,
        "total_s": t2 - t0,
        "optimization_steps": 0,
        "config_hash": config_hash(cfg),
    }
    with open(os.path.join(out_dir, "timing.json"), "w") as f:
        json.dump(timing, f, indent=1)
    return timing


def _injection_from_meta(
    cfg: ExperimentConfig,
    ck: Checkpoint,
    sites=None,
    scale_const=None,
    position_mode=None,
) -> Optional[InjectionConfig]:
    """Resolve the injection config for a checkpoint, honoring overrides.

    Base checkpoints sample without injection unless sites are forced."""
    meta = ck.meta
    if meta.get("kind") != "transfer" and sites is None:
        return None
    use_scaler = meta.get("use_scaler", ck.scalers is not None)
    default_const = None if use_scaler else 1.0
    return InjectionConfig(
        active_sites=tuple(sites) if sites is not None else tuple(meta.get("sites", cfg.injection.sites)),
        position_mode=position_mode or meta.get("position_mode", cfg.injection.position_mode),
        constant_scale_override=scale_const if scale_const is not None else default_const,
    )


# ----------------------------------------------------------------------
# eval


@dataclass
class EvalReport:
    variant: str
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    config_hash: str = ""

    def aggregate(self) -> None:
        if not self.rows:
            raise ParameterError("empty evaluation")
        keys = ("motion_fidelity", "temporal_consistency", "condition_alignment")
        self.aggregates = {k: float(np.mean([r[k] for r in self.rows])) for k in keys}
        self.aggregates["n"] = len(self.rows)

    def render_text(self) -> str:
        a = self.aggregates
        lines = [
            f"evaluation: {self.variant} (n={a['n']}, config {self.config_hash})",
            f"  TC {a['temporal_consistency']:.4f}  CA {a['condition_alignment']:.4f}  "
            f"MF {a['motion_fidelity']:.4f}",
            f"  phases: extraction {self.timing.get('extraction_s', 0.0):.2f}s, "
            f"sampling {self.timing.get('sampling_s', 0.0):.2f}s, "
            f"metrics {self.timing.get('metrics_s', 0.0):.2f}s",
        ]
        return "\n".join(lines)


def eval_labels_for_motion(
    cfg: ExperimentConfig, motion_index: int, used: set
) -> list[ConditionLabel]:
    """Deterministic unseen (appearance, background) combos for one motion."""
    rng = np.random.default_rng(cfg.seeds.eval * 1000 + motion_index)
    pool = [p for p in compatible_pairs() if p not in used]
    if len(pool) < cfg.eval.labels_per_motion:
        raise ConfigurationError("not enough unseen label combinations")
    pick = rng.choice(len(pool), size=cfg.eval.labels_per_motion, replace=False)
    return [ConditionLabel(*pool[i]) for i in sorted(pick.tolist())]


def cmd_eval(
    cfg: ExperimentConfig,
    ckpt_path: str,
    split: str = "test",
    variant: Optional[str] = None,
    with_baseline: bool = False,
    force: bool = False,
    sites: Optional[tuple[str, ...]] = None,
    scale_const: Optional[float] = None,
    position_mode: Optional[str] = None,
    write: bool = True,
) -> dict:
    """Evaluate a checkpoint over held-out motions with unseen labels.

    Returns {variant_tag: EvalReport}; includes a no-injection baseline
    when requested. Refuses checkpoints from a different config unless
    `force` is set.
    """
    configure_runtime()
    root = _dataset_root(cfg)
    records = read_manifest(os.path.join(root, "manifest.jsonl"))
    test = [r for r in records if r.split == split]
    if not test:
        raise ParameterError(f"no records in split {split!r}")

    ck = load_checkpoint(ckpt_path, expect_spec=cfg.unet)
    h = config_hash(cfg)
    if ck.meta.get("config_hash") not in (None, h) and not force:
        raise ConfigurationError(
            f"checkpoint config hash {ck.meta.get('config_hash')} != current {h} (use force to override)"
        )
    inj_cfg = _injection_from_meta(
        cfg, ck, sites=sites, scale_const=scale_const, position_mode=position_mode
    )
    variant = variant or (
        "baseline" if inj_cfg is None else f"{ck.meta.get('kind', 'model')}"
    )

    used = {
        (r.tgt_labels.appearance_id, r.tgt_labels.background_id) for r in records if r.split == "train"
    } | {
        (r.ref_labels.appearance_id, r.ref_labels.background_id) for r in records if r.split == "train"
    }

    reports = {variant: EvalReport(variant=variant, config_hash=h)}
    if with_baseline:
        reports["baseline"] = EvalReport(variant="baseline", config_hash=h)

    null_ok = ck.meta.get("p_null", 0.0) > 0.0
    n_frames = cfg.dataset.n_frames
    shape = (n_frames, 3, cfg.dataset.res[0], cfg.dataset.res[1])
    needs_gamma = inj_cfg is not None and inj_cfg.constant_scale_override != 0.0
    extractor = None
    if needs_gamma:
        extractor = _extractor_for(ck, cfg) if ck.meta.get("kind") == "transfer" else ck.model

    for mi, rec in enumerate(sorted(test, key=lambda r: r.id)):
        ref = load_video(os.path.join(root, rec.ref_dir))
        labels = eval_labels_for_motion(cfg, mi, used)
        bank = TemplateBank([l.appearance_id for l in labels], res=cfg.dataset.res[0])
        cond_ids = torch.tensor(
            [[l.appearance_id, l.background_id] for l in labels], dtype=torch.long
        )
        sample_seed = cfg.seeds.eval * 100000 + mi

        t0 = time.perf_counter()
        gamma = None
        if needs_gamma:
            gamma = extract_reference_features(
                extractor, ref, cfg.injection.t_ref,
                noise_seed=cfg.seeds.extraction + mi, schedule=ck.schedule,
            )
        t1 = time.perf_counter()

        batches = {}
        if not needs_gamma:
            batches[variant] = ddim_sample(
                ck.model, cond_ids, ck.schedule, shape,
                steps=cfg.eval.ddim_steps, guidance_w=cfg.eval.guidance_w,
                seed=sample_seed, null_conditioning_trained=null_ok, batch=len(labels),
            )
        else:
            injection = build_injection_state(gamma, inj_cfg, ck.scalers, batch=len(labels))
            batches[variant] = ddim_sample(
                ck.model, cond_ids, ck.schedule, shape,
                steps=cfg.eval.ddim_steps, guidance_w=cfg.eval.guidance_w,
                seed=sample_seed, injection=injection,
                null_conditioning_trained=null_ok, batch=len(labels),
            )
        if with_baseline:
            batches["baseline"] = ddim_sample(
                ck.model, cond_ids, ck.schedule, shape,
                steps=cfg.eval.ddim_steps, guidance_w=cfg.eval.guidance_w,
                seed=sample_seed, null_conditioning_trained=null_ok, batch=len(labels),
            )
        t2 = time.perf_counter()

        for tag, batch in batches.items():
            rep = reports[tag]
            for li, label in enumerate(labels):
                gen = Video(data=batch[li].numpy())
                mf = tracked_motion_fidelity(
                    ref, gen, cfg.eval.tracker, cfg.eval.min_displacement
                )
                rep.rows.append(
                    {
                        "motion_id": rec.motion_id,
                        "appearance_id": label.appearance_id,
                        "background_id": label.background_id,
                        "motion_fidelity": float(mf),
                        "mf_degenerate": bool(mf.degenerate),
                        "temporal_consistency": float(temporal_consistency(gen)),
                        "condition_alignment": float(condition_alignment(gen, label, bank)),
                    }
                )
        t3 = time.perf_counter()
        for rep in reports.values():
            rep.timing["extraction_s"] = rep.timing.get("extraction_s", 0.0) + (t1 - t0)
            rep.timing["sampling_s"] = rep.timing.get("sampling_s", 0.0) + (t2 - t1)
            rep.timing["metrics_s"] = rep.timing.get("metrics_s", 0.0) + (t3 - t2)

    for rep in reports.values():
        rep.aggregate()
        if write:
            _write_eval_report(cfg, rep)
    return reports


def _extractor_for(ck: Checkpoint, cfg: ExperimentConfig) -> VideoUNet:
    """Transfer checkpoints extract features with the frozen base weights."""
    base_path = os.path.join(cfg.out_dir, "checkpoints", "base.ckpt")
    if os.path.exists(base_path):
        base = load_checkpoint(base_path, expect_spec=ck.spec)
        if model_weights_hash(base.model) == ck.meta.get("base_weights_hash"):
            base.model.eval()
            return base.model
        raise ConfigurationError(
            "base checkpoint does not match the extractor this model was finetuned against"
        )
    raise ConfigurationError("transfer evaluation needs the base checkpoint for extraction")


def _write_eval_report(cfg: ExperimentConfig, rep: EvalReport) -> None:
    out = os.path.join(cfg.out_dir, "eval", rep.variant)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "rows.jsonl"), "w") as f:
        for row in rep.rows:
            f.write(json.dumps(row) + "\n")
    with open(os.path.join(out, "summary.json"), "w") as f:
        json.dump(
            {
                "variant": rep.variant,
                "aggregates": rep.aggregates,
                "timing": rep.timing,
                "config_hash": rep.config_hash,
            },
            f, indent=1, sort_keys=True,
        )
    with open(os.path.join(out, "table.txt"), "w") as f:
        f.write(rep.render_text() + "\n")


# ----------------------------------------------------------------------
# ablate


ABLATION_VARIANTS = ("full", "w/o scaler", "w/o filter", "sites up1", "sites up1+2")
SWEEP_SCALES = (0.0, 0.25, 0.5, 0.75, 1.0)


def cmd_ablate(cfg: ExperimentConfig, ckpts: dict, force: bool = False) -> dict:
    """Assemble the ablation table, the constant-scale sweep, and per-site
    scale-map heatmaps.

    `ckpts` maps variant name -> checkpoint path for any subset of
    {full, no_scaler, no_filter, up1, up12, base}; missing variants are
    listed as absent rather than fabricated.
    """
    configure_runtime()
    result = {"table": {}, "sweep": {}, "absent": [], "config_hash": config_hash(cfg)}
    rows = {
        "full": ("full", {}),
        "no_scaler": ("w/o scaler", {}),
        "no_filter": ("w/o filter", {}),
        "up1": ("sites up1", {}),
        "up12": ("sites up1+2", {}),
    }
    for key, (label, kwargs) in rows.items():
        path = ckpts.get(key)
        if not path or not os.path.exists(path):
            result["absent"].append(label)
            continue
        rep = cmd_eval(cfg, path, variant=f"ablate_{key}", force=force, write=True, **kwargs)
        agg = rep[f"ablate_{key}"].aggregates
        result["table"][label] = {
            "TC": agg["temporal_consistency"],
            "CA": agg["condition_alignment"],
            "MF": agg["motion_fidelity"],
        }

    if ckpts.get("base") and os.path.exists(ckpts["base"]):
        rep = cmd_eval(cfg, ckpts["base"], variant="ablate_baseline", force=force, write=True)
        agg = rep["ablate_baseline"].aggregates
        result["table"]["no injection"] = {
            "TC": agg["temporal_consistency"],
            "CA": agg["condition_alignment"],
            "MF": agg["motion_fidelity"],
        }

    if ckpts.get("no_scaler") and os.path.exists(ckpts["no_scaler"]):
        for s in SWEEP_SCALES:
            rep = cmd_eval(
                cfg, ckpts["no_scaler"], variant=f"sweep_{s:g}", force=force,
                scale_const=s, write=True,
            )
            agg = rep[f"sweep_{s:g}"].aggregates
            result["sweep"][s] = {
                "TC": agg["temporal_consistency"],
                "CA": agg["condition_alignment"],
                "MF": agg["motion_fidelity"],
            }

    if ckpts.get("full") and os.path.exists(ckpts["full"]):
        result["scale_map_pngs"] = dump_scale_maps(cfg, ckpts["full"])

    out = os.path.join(cfg.out_dir, "ablation")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "ablation.json"), "w") as f:
        json.dump(result, f, indent=1, sort_keys=True)
    with open(os.path.join(out, "ablation.txt"), "w") as f:
        f.write(render_ablation_table(result) + "\n")
    return result


def render_ablation_table(result: dict) -> str:
    lines = ["ablation table (metrics: TC, CA, MF)", "-" * 48]
    for label in ("w/o scaler", "w/o filter", "sites up1", "sites up1+2", "full", "no injection"):
        if label in result["table"]:
            r = result["table"][label]
            lines.append(f"{label:<14} TC {r['TC']:.4f}  CA {r['CA']:.4f}  MF {r['MF']:.4f}")
        elif label in result.get("absent", []):
            lines.append(f"{label:<14} (absent: no checkpoint)")
    if result.get("sweep"):
        lines.append("")
        lines.append("constant-scale sweep (w/o-scaler model)")
        for s in sorted(result["sweep"]):
            r = result["sweep"][s]
            lines.append(f"  scale {s:<4} TC {r['TC']:.4f}  CA {r['CA']:.4f}  MF {r['MF']:.4f}")
    return "\n".join(lines)


def dump_scale_maps(cfg: ExperimentConfig, ckpt_path: str) -> list[str]:
    """Render per-site scale-map heatmaps for the first held-out motion."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    root = _dataset_root(cfg)
    records = [r for r in read_manifest(os.path.join(root, "manifest.jsonl")) if r.split == "test"]
    if not records:
        raise ParameterError("no test records for scale-map dump")
    rec = sorted(records, key=lambda r: r.id)[0]
    ref = load_video(os.path.join(root, rec.ref_dir))
    ck = load_checkpoint(ckpt_path, expect_spec=cfg.unet)
    extractor = _extractor_for(ck, cfg) if ck.meta.get("kind") == "transfer" else ck.model
    gamma = extract_reference_features(
        extractor, ref, cfg.injection.t_ref, noise_seed=cfg.seeds.extraction, schedule=ck.schedule
    )
    inj_cfg = _injection_from_meta(cfg, ck)
    if inj_cfg is None or ck.scalers is None:
        raise ConfigurationError("scale maps require a scaler-equipped transfer checkpoint")
    injection = build_injection_state(gamma, inj_cfg, ck.scalers, batch=1, collect_scale_maps=True)

    x = torch.from_numpy(ref.data).unsqueeze(0)
    gen = torch.Generator().manual_seed(cfg.seeds.eval)
    eps = torch.randn(x.shape, generator=gen)
    from .schedule import q_sample

    t_mid = ck.schedule.T // 2
    x_t = q_sample(x, t_mid, eps, ck.schedule).float()
    cond = torch.tensor([[rec.tgt_labels.appearance_id, rec.tgt_labels.background_id]])
    with torch.no_grad():
        ck.model(x_t, torch.tensor([t_mid]), cond, injection=injection)

    out_dir = os.path.join(cfg.out_dir, "ablation", "scale_maps")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for site, amap in injection.scale_maps.items():
        a = amap[0, :, :, :, 0].numpy()  # (h, w, n)
        n = a.shape[2]
        fig, axes = plt.subplots(1, n, figsize=(1.2 * n, 1.5))
        for i in range(n):
            ax = axes[i] if n > 1 else axes
            ax.imshow(a[:, :, i], vmin=0.0, vmax=1.0, cmap="viridis")
            ax.set_axis_off()
        fig.suptitle(f"{site} scale map")
        path = os.path.join(out_dir, f"{site}.png")
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths
