"""Command-line entry point.

    motionweave <gen-data|train-base|train-transfer|sample|eval|ablate>
        --config <file> [--seed N] [--no-filter] [--sites up1,up2]
        [--scale-const S] [--no-scaler] [--position-mode extended|aligned]
        [--t-ref N] ...
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .config import ExperimentConfig, load_config
from .errors import MotionWeaveError
from .harness import (
    cmd_ablate,
    cmd_eval,
    cmd_gen_data,
    cmd_sample,
    cmd_train_base,
    cmd_train_transfer,
    prepare_filtered_manifest,
)
from .video import ConditionLabel


def _parse_sites(text):
    return tuple(s.strip() for s in text.split(",") if s.strip()) if text else None


def _with_seed(cfg: ExperimentConfig, seed) -> ExperimentConfig:
    if seed is None:
        return cfg
    seeds = replace(
        cfg.seeds,
        data=seed, base_train=seed + 1, transfer_train=seed + 2,
        eval=seed + 3, extraction=seed + 4,
    )
    dataset = replace(cfg.dataset, seed=seed)
    return replace(cfg, seeds=seeds, dataset=dataset)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="motionweave", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override all seeds")

    sp = sub.add_parser("gen-data", help="build the paired-motion dataset")
    common(sp)
    sp.add_argument("--filter", action="store_true", help="also calibrate and run the sample filter")

    sp = sub.add_parser("train-base", help="train the base video model")
    common(sp)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")
    sp.add_argument("--out-name", default="base.ckpt")

    sp = sub.add_parser("train-transfer", help="finetune for motion transfer")
    common(sp)
    sp.add_argument("--base-ckpt", required=True)
    sp.add_argument("--sites", type=str, default=None, help="comma list, e.g. up1,up2")
    sp.add_argument("--no-scaler", action="store_true")
    sp.add_argument("--no-filter", action="store_true")
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--out-name", default="transfer_full.ckpt")

    sp = sub.add_parser("sample", help="capture a reference motion and generate")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--base-ckpt", default=None, help="extractor checkpoint (for transfer ckpts)")
    sp.add_argument("--ref", required=True, help="reference video frame directory")
    sp.add_argument("--appearance", type=int, required=True)
    sp.add_argument("--background", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sites", type=str, default=None)
    sp.add_argument("--scale-const", type=float, default=None)
    sp.add_argument("--position-mode", choices=("extended", "aligned"), default=None)
    sp.add_argument("--t-ref", type=int, default=None)
    sp.add_argument("--gif", action="store_true")

    sp = sub.add_parser("eval", help="evaluate on held-out motions")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--variant", default=None)
    sp.add_argument("--with-baseline", action="store_true")
    sp.add_argument("--force", action="store_true", help="ignore config-hash mismatches")
    sp.add_argument("--sites", type=str, default=None)
    sp.add_argument("--scale-const", type=float, default=None)
    sp.add_argument("--position-mode", choices=("extended", "aligned"), default=None)

    sp = sub.add_parser("ablate", help="run the ablation matrix")
    common(sp)
    sp.add_argument("--full", default=None)
    sp.add_argument("--no-scaler-ckpt", dest="no_scaler_ckpt", default=None)
    sp.add_argument("--no-filter-ckpt", dest="no_filter_ckpt", default=None)
    sp.add_argument("--up1", default=None)
    sp.add_argument("--up12", default=None)
    sp.add_argument("--base", default=None)
    sp.add_argument("--force", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _with_seed(load_config(args.config), args.seed)
    try:
        if args.command == "gen-data":
            manifest = cmd_gen_data(cfg)
            print(manifest)
            if args.filter:
                print(prepare_filtered_manifest(cfg))
        elif args.command == "train-base":
            print(cmd_train_base(cfg, steps=args.steps, resume_from=args.resume, out_name=args.out_name))
        elif args.command == "train-transfer":
            print(
                cmd_train_transfer(
                    cfg, args.base_ckpt,
                    sites=_parse_sites(args.sites),
                    use_scaler=False if args.no_scaler else None,
                    no_filter=args.no_filter,
                    steps=args.steps,
                    out_name=args.out_name,
                )
            )
        elif args.command == "sample":
            timing = cmd_sample(
                cfg, args.ckpt, args.ref,
                ConditionLabel(args.appearance, args.background),
                args.out, base_ckpt=args.base_ckpt,
                t_ref=args.t_ref, sites=_parse_sites(args.sites),
                scale_const=args.scale_const, position_mode=args.position_mode,
                gif=args.gif,
            )
            print(json.dumps(timing, indent=1))
        elif args.command == "eval":
            reports = cmd_eval(
                cfg, args.ckpt, split=args.split, variant=args.variant,
                with_baseline=args.with_baseline, force=args.force,
                sites=_parse_sites(args.sites), scale_const=args.scale_const,
                position_mode=args.position_mode,
            )
            for rep in reports.values():
                print(rep.render_text())
        elif args.command == "ablate":
            ckpts = {
                "full": args.full,
                "no_scaler": args.no_scaler_ckpt,
                "no_filter": args.no_filter_ckpt,
                "up1": args.up1,
                "up12": args.up12,
                "base": args.base,
            }
            result = cmd_ablate(cfg, {k: v for k, v in ckpts.items() if v}, force=args.force)
            from .harness import render_ablation_table

            print(render_ablation_table(result))
    except MotionWeaveError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
