"""Command-line entry point.

Subcommands: gen-data, train, eval, beam-pattern, sweep-distance,
sweep-bits, index-curve, overhead.  Scale presets: --desk (64 antennas,
256 subcarriers, 5-50 m) and --paper (256 antennas, 1584 subcarriers,
5-300 m); --config FILE loads a key=value file instead.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (SystemConfig, desk_scale_config, load_config,
                     paper_scale_config, with_overrides)
from .dataset import export_csv, load_dataset, make_splits, save_dataset
from .experiments import (DEFAULT_BITS_GRID, DEFAULT_DISTANCE_GRID,
                          ExperimentSpec, default_fixed_beam, report_overhead,
                          run_beam_pattern, run_index_curve, run_sweep_bits,
                          run_sweep_max_distance, train_method, write_csv)
from .training import TrainConfig, evaluate


def _add_scale_args(p: argparse.ArgumentParser):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--desk", action="store_true",
                   help="desk-scale preset (default)")
    g.add_argument("--paper", action="store_true", help="full-scale preset")
    g.add_argument("--config", type=str, help="key=value config file")
    p.add_argument("--range-max", type=float, default=None,
                   help="override the maximum user range (m)")
    p.add_argument("--seed", type=int, default=0)


def _resolve_config(args) -> SystemConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "paper", False):
        cfg = paper_scale_config()
    else:
        cfg = desk_scale_config()
    overrides = {"rng_seed": args.seed}
    if getattr(args, "range_max", None) is not None:
        overrides["range_max_m"] = args.range_max
    return with_overrides(cfg, **overrides)


def _add_train_args(p: argparse.ArgumentParser):
    p.add_argument("--counts", type=int, nargs=3, default=(10000, 1000, 1000),
                   metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--f64", action="store_true",
                   help="keep the beamforming phasor block in double precision")
    p.add_argument("--bits", type=int, default=None,
                   help="quantization-aware training bit width")


def _resolve_train_cfg(args) -> TrainConfig:
    tc = TrainConfig()
    if getattr(args, "epochs", None) is not None:
        tc.max_epochs = args.epochs
    if getattr(args, "batch", None) is not None:
        tc.batch_size = args.batch
    if getattr(args, "lr", None) is not None:
        tc.lr = args.lr
    if getattr(args, "f64", False):
        tc.compute_dtype = "complex128"
    return tc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rainbowloc",
        description="wideband rainbow-beam localization: simulate, train, evaluate")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and save train/val/test datasets")
    _add_scale_args(p)
    p.add_argument("--counts", type=int, nargs=3, default=(10000, 1000, 1000))
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the beam and estimator end to end")
    _add_scale_args(p)
    _add_train_args(p)
    p.add_argument("--fixed-beam", action="store_true",
                   help="freeze the analytic beam; train the estimator only")
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a fresh test set")
    _add_scale_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--counts", type=int, nargs=3, default=(10000, 1000, 1000))
    p.add_argument("--bits", type=int, default=None)
    p.add_argument("--noise-seed", type=int, default=0)

    p = sub.add_parser("beam-pattern", help="export a power heatmap CSV")
    _add_scale_args(p)
    p.add_argument("--checkpoint", default=None,
                   help="learned checkpoint; omit for the analytic design")
    p.add_argument("--out", required=True)
    p.add_argument("--angle-step", type=float, default=1.0)
    p.add_argument("--range-step", type=float, default=1.0)
    p.add_argument("--png", action="store_true")

    p = sub.add_parser("sweep-distance", help="RMSE vs maximum user range")
    _add_scale_args(p)
    _add_train_args(p)
    p.add_argument("--distances", type=float, nargs="+",
                   default=list(DEFAULT_DISTANCE_GRID))
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep-bits", help="RMSE vs feedback quantization bits")
    _add_scale_args(p)
    _add_train_args(p)
    p.add_argument("--bit-grid", type=int, nargs="+",
                   default=list(DEFAULT_BITS_GRID))
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--mode", choices=("posthoc", "qat"), default="posthoc")
    p.add_argument("--out", required=True)

    p = sub.add_parser("index-curve", help="peak subcarrier vs distance CSV")
    _add_scale_args(p)
    p.add_argument("--range-step", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("overhead", help="feedback bits and estimator FLOPs")
    _add_scale_args(p)
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    cfg = _resolve_config(args)

    if args.command == "gen-data":
        os.makedirs(args.out, exist_ok=True)
        for ds in make_splits(cfg, tuple(args.counts), args.seed):
            save_dataset(ds, os.path.join(args.out, f"{ds.split}.rbds"))
            export_csv(ds, os.path.join(args.out, f"{ds.split}.csv"))
        print(f"wrote {args.counts} samples to {args.out}")
        return 0

    if args.command == "train":
        os.makedirs(args.out, exist_ok=True)
        splits = make_splits(cfg, tuple(args.counts), args.seed)
        train_cfg = _resolve_train_cfg(args)
        method = "fixed-beam" if args.fixed_beam else "learned"
        ckpt = train_method(method, splits, cfg, train_cfg, args.seed,
                            bits=args.bits, verbose=not args.quiet)
        path = os.path.join(args.out, f"{method}_seed{args.seed}.json")
        save_checkpoint(ckpt, path)
        rep = evaluate(ckpt, splits[2], noise_seed=args.seed)
        print(f"checkpoint: {path}")
        print(f"test {rep}")
        return 0

    if args.command == "eval":
        ckpt = load_checkpoint(args.checkpoint)
        splits = make_splits(cfg, tuple(args.counts), args.seed)
        rep = evaluate(ckpt, splits[2], cfg=cfg, bits=args.bits,
                       noise_seed=args.noise_seed)
        print(f"test {rep}")
        return 0

    if args.command == "beam-pattern":
        if args.checkpoint:
            source = load_checkpoint(args.checkpoint)
            tag = "learned"
        else:
            source = default_fixed_beam(cfg)
            tag = "analytic"
        path = run_beam_pattern(cfg, args.out, tag, source,
                                angle_step_deg=args.angle_step,
                                range_step_m=args.range_step, png=args.png)
        print(f"wrote {path}")
        return 0

    if args.command == "sweep-distance":
        spec = ExperimentSpec(kind="sweep-max-distance", cfg=cfg,
                              out_dir=args.out, seeds=tuple(args.seeds),
                              grid=tuple(args.distances),
                              counts=tuple(args.counts),
                              train_cfg=_resolve_train_cfg(args))
        path = run_sweep_max_distance(spec)
        print(f"wrote {path}")
        return 0

    if args.command == "sweep-bits":
        spec = ExperimentSpec(kind="sweep-bits", cfg=cfg, out_dir=args.out,
                              seeds=tuple(args.seeds), grid=tuple(args.bit_grid),
                              counts=tuple(args.counts),
                              train_cfg=_resolve_train_cfg(args))
        path = run_sweep_bits(spec, mode=args.mode)
        print(f"wrote {path}")
        return 0

    if args.command == "index-curve":
        path = run_index_curve(cfg, args.out, range_step_m=args.range_step)
        print(f"wrote {path}")
        return 0

    if args.command == "overhead":
        report = report_overhead(cfg, bits=args.bits)
        for key, value in report.items():
            print(f"{key}: {value}")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            path = os.path.join(args.out, "overhead.csv")
            write_csv(path, f"config_hash={cfg.config_hash()} bits={args.bits}",
                      ("metric", "value"), list(report.items()))
            print(f"wrote {path}")
        return 0

    parser.error(f"unhandled command {args.command}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
