"""Experiment drivers: sweeps, pattern maps, and overhead reports.

Every emitted CSV starts with a header comment carrying the config hash and
the seeds, and reruns with identical seeds write identical bytes.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .analytic import (EndpointBeamDesign, build_lookup_table,
                       design_endpoint_beam, index_distance_curve,
                       lookup_estimates_batch)
from .beamformer import beam_pattern_map, project_params
from .checkpoint import Checkpoint, load_checkpoint
from .config import SystemConfig, derive_grids, with_overrides
from .dataset import Dataset, make_splits
from .estimator import MlpParams, flops_count, init_mlp
from .feedback import index_bits, per_user_feedback_bits
from .training import (LossReport, TrainConfig, _eval_powers, _report,
                       evaluate_params, train)

DEFAULT_DISTANCE_GRID = (50.0, 100.0, 150.0, 200.0, 250.0, 300.0)
DEFAULT_BITS_GRID = (1, 2, 3, 4, 5, 6, 8)
METHODS = ("learned", "fixed-beam", "lookup")


@dataclass
class ExperimentSpec:
    kind: str
    cfg: SystemConfig
    out_dir: str
    seeds: tuple[int, ...] = (0,)
    grid: tuple = ()
    counts: tuple[int, int, int] = (10000, 1000, 1000)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if len(self.grid) == 0 and self.kind in ("sweep-max-distance", "sweep-bits"):
            raise ValueError("empty parameter grid")
        os.makedirs(self.out_dir, exist_ok=True)


def write_csv(path, comment: str, columns, rows) -> None:
    def fmt(v):
        if isinstance(v, float):
            return repr(float(v))
        return str(v)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {comment}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def anchor_range_for(cfg: SystemConfig) -> float:
    """Anchor depth of the analytic beam: 10 m for compact regions, 200 m for wide."""
    r = 10.0 if cfg.range_max_m <= 100.0 else 200.0
    return float(np.clip(r, cfg.range_min_m, cfg.range_max_m))


def default_fixed_beam(cfg: SystemConfig, grids=None) -> EndpointBeamDesign:
    grids = grids if grids is not None else derive_grids(cfg)
    r = anchor_range_for(cfg)
    return design_endpoint_beam((-cfg.angle_bound_rad, r),
                                (cfg.angle_bound_rad, r), cfg, grids)


def train_method(method: str, splits, cfg: SystemConfig, train_cfg: TrainConfig,
                 seed: int, bits: int | None = None, verbose=False) -> Checkpoint:
    train_ds, val_ds, _ = splits
    design = default_fixed_beam(cfg)
    if method == "learned":
        # warm-start the trainable beam at the analytic design; cold random
        # starts settle in far worse deployment optima
        _, ckpt = train(train_ds, val_ds, cfg, train_cfg, bits=bits, seed=seed,
                        init_beam=design.proj, verbose=verbose)
    elif method == "fixed-beam":
        _, ckpt = train(train_ds, val_ds, cfg, train_cfg, bits=bits, seed=seed,
                        fixed_beam=design.proj, verbose=verbose)
    else:
        raise ValueError(f"unknown trainable method {method!r}")
    return ckpt


def lookup_report(cfg: SystemConfig, test_ds: Dataset, noise_seed: int) -> LossReport:
    grids = derive_grids(cfg)
    design = default_fixed_beam(cfg, grids)
    table = build_lookup_table(design, cfg, grids)
    powers = _eval_powers(design.proj, test_ds, cfg, grids, noise_seed)
    ang, rng = lookup_estimates_batch(powers, table, cfg)
    return _report(ang, rng, test_ds.angles_rad, test_ds.ranges_m)


def run_sweep_max_distance(spec: ExperimentSpec) -> str:
    """RMSE vs maximum user range for each method; medians across seeds."""
    rows = []
    for dist in spec.grid:
        cfg_d = with_overrides(spec.cfg, range_max_m=float(dist))
        per_method = {m: [] for m in METHODS}
        for seed in spec.seeds:
            splits = make_splits(cfg_d, spec.counts, seed)
            for method in ("learned", "fixed-beam"):
                ckpt = train_method(method, splits, cfg_d, spec.train_cfg, seed)
                rep = evaluate_params(
                    project_params(ckpt.pta, cfg_d), ckpt.mlp, ckpt.scaler,
                    splits[2], cfg_d, derive_grids(cfg_d), noise_seed=seed)
                per_method[method].append(rep)
            per_method["lookup"].append(lookup_report(cfg_d, splits[2], seed))
        for method in METHODS:
            reps = per_method[method]
            rows.append((
                float(dist), method,
                float(np.median([r.rmse_2d_m for r in reps])),
                float(np.median([math.degrees(r.angle_rmse_rad) for r in reps])),
                float(np.median([r.range_rmse_m for r in reps])),
            ))
    path = os.path.join(spec.out_dir, "sweep_distance.csv")
    write_csv(path,
              f"config_hash={spec.cfg.config_hash()} "
              f"seeds={','.join(map(str, spec.seeds))}",
              ("max_distance_m", "method", "rmse_2d_m", "angle_rmse_deg",
               "range_rmse_m"), rows)
    return path


def run_sweep_bits(spec: ExperimentSpec, mode: str = "posthoc",
                   checkpoints: dict | None = None) -> str:
    """RMSE vs feedback quantization bits; bits=0 row is the unquantized reference.

    mode "posthoc" quantizes the feedback of models trained without
    quantization; "qat" retrains one model per bit width with the quantizer
    in the training graph (straight-through gradient).
    """
    if mode not in ("posthoc", "qat"):
        raise ValueError("mode must be 'posthoc' or 'qat'")
    bits_list = tuple(int(b) for b in spec.grid)
    if any(not 1 <= b <= 8 for b in bits_list):
        raise ValueError("bit grid must lie in 1..8")
    rows = []
    methods = ("learned", "fixed-beam")
    per_seed_splits = {seed: make_splits(spec.cfg, spec.counts, seed)
                       for seed in spec.seeds}
    grids = derive_grids(spec.cfg)

    def eval_ckpt(ckpt, seed, bits):
        return evaluate_params(
            project_params(ckpt.pta, spec.cfg), ckpt.mlp, ckpt.scaler,
            per_seed_splits[seed][2], spec.cfg, grids,
            bits=bits, noise_seed=seed).rmse_2d_m

    if mode == "posthoc":
        base = checkpoints or {
            m: [train_method(m, per_seed_splits[s], spec.cfg, spec.train_cfg, s)
                for s in spec.seeds] for m in methods}
        for method in methods:
            for bits in (0,) + bits_list:
                vals = [eval_ckpt(base[method][i], seed, None if bits == 0 else bits)
                        for i, seed in enumerate(spec.seeds)]
                rows.append((bits, method, float(np.median(vals))))
    else:
        for method in methods:
            for bits in (0,) + bits_list:
                vals = []
                for seed in spec.seeds:
                    ckpt = train_method(method, per_seed_splits[seed], spec.cfg,
                                        spec.train_cfg, seed,
                                        bits=None if bits == 0 else bits)
                    vals.append(eval_ckpt(ckpt, seed, None if bits == 0 else bits))
                rows.append((bits, method, float(np.median(vals))))

    rows.sort(key=lambda r: (r[1], r[0]))
    path = os.path.join(spec.out_dir, "sweep_bits.csv")
    write_csv(path,
              f"config_hash={spec.cfg.config_hash()} "
              f"seeds={','.join(map(str, spec.seeds))} mode={mode} "
              f"(bits=0 means unquantized)",
              ("bits", "method", "rmse_2d_m"), rows)
    return path


def run_beam_pattern(cfg: SystemConfig, out_dir: str, tag: str,
                     source: Checkpoint | EndpointBeamDesign,
                     angle_step_deg: float = 1.0, range_step_m: float = 1.0,
                     png: bool = False) -> str:
    """Max-over-subcarrier received power heatmap as CSV (and optional PNG)."""
    os.makedirs(out_dir, exist_ok=True)
    grids = derive_grids(cfg)
    if isinstance(source, EndpointBeamDesign):
        proj = source.proj
    else:
        proj = project_params(source.pta, cfg)
    bound_deg = math.degrees(cfg.angle_bound_rad)
    angles_deg = np.arange(-bound_deg, bound_deg + 1e-9, angle_step_deg)
    ranges = np.arange(cfg.range_min_m, cfg.range_max_m + 1e-9, range_step_m)
    grid_db = beam_pattern_map(proj, np.deg2rad(angles_deg), ranges, cfg, grids)
    rows = [(float(a), float(r), float(grid_db[i, j]))
            for i, a in enumerate(angles_deg) for j, r in enumerate(ranges)]
    path = os.path.join(out_dir, f"beam_pattern_{tag}.csv")
    write_csv(path, f"config_hash={cfg.config_hash()} tag={tag}",
              ("angle_deg", "range_m", "power_dbm"), rows)
    if png:
        _save_heatmap(os.path.join(out_dir, f"beam_pattern_{tag}.png"),
                      angles_deg, ranges, grid_db)
    return path


def _save_heatmap(path, angles_deg, ranges, grid_db) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed; skipping heatmap image")
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.pcolormesh(ranges, angles_deg, grid_db, shading="auto")
    fig.colorbar(im, ax=ax, label="power (dBm)")
    ax.set_xlabel("range (m)")
    ax.set_ylabel("angle (deg)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def run_index_curve(cfg: SystemConfig, out_dir: str,
                    range_step_m: float = 1.0) -> str:
    """Peak-subcarrier vs distance for a boresight start-to-end range sweep."""
    os.makedirs(out_dir, exist_ok=True)
    grids = derive_grids(cfg)
    design = design_endpoint_beam((0.0, cfg.range_min_m), (0.0, cfg.range_max_m),
                                  cfg, grids)
    ranges = np.arange(cfg.range_min_m, cfg.range_max_m + 1e-9, range_step_m)
    curve = index_distance_curve(design, ranges, cfg, grids)
    path = os.path.join(out_dir, "index_curve.csv")
    write_csv(path, f"config_hash={cfg.config_hash()}",
              ("range_m", "peak_subcarrier"),
              [(float(r), int(i)) for r, i in curve])
    return path


def report_overhead(cfg: SystemConfig, bits: int = 8,
                    mlp: MlpParams | None = None) -> dict:
    """Uplink feedback bits per user and estimator FLOPs."""
    if mlp is None:
        mlp = init_mlp(cfg, np.random.default_rng(0))
    return {
        "index_bits": index_bits(cfg.num_subcarriers),
        "power_bits": bits,
        "per_user_feedback_bits": per_user_feedback_bits(cfg.num_subcarriers, bits),
        "estimator_flops": flops_count(mlp),
    }
