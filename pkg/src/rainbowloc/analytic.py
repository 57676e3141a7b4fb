"""Analytic rainbow-beam baseline and the non-learned range lookup.

The design matches per-antenna weights to ideal near-field focusing phases
at the two band edges: the lowest subcarrier focuses on a start anchor and
the highest on an end anchor, with intermediate subcarriers tracing the
path between them.  Solving the two-frequency system per antenna gives the
delay directly; the phases are computed from continuous (never wrapped)
focusing profiles so no 2*pi branch artifacts enter the delays, and the
final modulo projection of the delay is absorbed into the phase, which is
exact on the uniform subcarrier grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression

from .beamformer import ProjectedPta, PtaParams, received_powers
from .checkpoint import Checkpoint
from .config import DerivedGrids, SystemConfig, watts_to_dbm
from .estimator import PositionEstimate
from .feedback import FeedbackMessage, normalized_weights, soft_index
from .geometry import geometry_delays


@dataclass(frozen=True)
class EndpointBeamDesign:
    """Anchors are (angle_rad, range_m) pairs in the user-facing convention."""

    start: tuple[float, float]
    end: tuple[float, float]
    proj: ProjectedPta


def focusing_phase(anchor, freq_hz: float, cfg: SystemConfig,
                   grids: DerivedGrids) -> np.ndarray:
    """Per-antenna weight phase that focuses frequency f on the anchor.

    Continuous in the antenna index (no modulo), psi_n = -2 pi f tau_n with
    tau_n the excess propagation delay to the anchor.
    """
    tau = geometry_delays([anchor[0]], [anchor[1]], cfg, grids)[0]
    return -2.0 * math.pi * freq_hz * tau


def _check_anchor(anchor, cfg: SystemConfig, name: str):
    angle, rng = anchor
    if not (cfg.range_min_m <= rng <= cfg.range_max_m
            and abs(angle) <= cfg.angle_bound_rad + 1e-12):
        raise ValueError(f"{name} anchor outside the service region")


def design_endpoint_beam(start, end, cfg: SystemConfig,
                         grids: DerivedGrids) -> EndpointBeamDesign:
    """Solve phi_n - 2 pi f t_n = psi_ideal(f, anchor, n) at f_1/start and f_M/end."""
    _check_anchor(start, cfg, "start")
    _check_anchor(end, cfg, "end")
    freqs = grids.subcarrier_freqs_hz
    f_lo, f_hi = freqs[0], freqs[-1]
    if f_hi == f_lo:
        raise ValueError("degenerate design: band edges coincide")
    psi_lo = focusing_phase(start, f_lo, cfg, grids)
    psi_hi = focusing_phase(end, f_hi, cfg, grids)
    t_raw = (psi_lo - psi_hi) / (2.0 * math.pi * (f_hi - f_lo))
    phi_raw = psi_lo + 2.0 * math.pi * f_lo * t_raw
    # project delays into [0, 1/f_scs); on the subcarrier grid the induced
    # phase is frequency-flat, so it folds into the phase shifter exactly
    f_scs = cfg.subcarrier_spacing_hz
    wraps = np.floor(t_raw * f_scs)
    delays = t_raw - wraps / f_scs
    offset = cfg.carrier_freq_hz / f_scs - (cfg.num_subcarriers + 1) / 2.0
    phi = np.mod(phi_raw - 2.0 * math.pi * wraps * offset, 2.0 * math.pi)
    return EndpointBeamDesign(start=(float(start[0]), float(start[1])),
                              end=(float(end[0]), float(end[1])),
                              proj=ProjectedPta(phi=phi, delays=delays))


def design_to_checkpoint(design: EndpointBeamDesign, cfg: SystemConfig) -> Checkpoint:
    pta = PtaParams(theta_phi=design.proj.phi.copy(),
                    theta_t=design.proj.delays.copy())
    return Checkpoint(cfg=cfg, pta=pta, kind="analytic",
                      meta={"start": list(design.start), "end": list(design.end)})


def index_distance_curve(design: EndpointBeamDesign, range_grid,
                         cfg: SystemConfig, grids: DerivedGrids) -> np.ndarray:
    """(range_m, argmax subcarrier) pairs along the design's shared angle.

    Requires both anchors at one angle; the peak index is the argmax of the
    noiseless received power, 1-based.
    """
    if abs(design.start[0] - design.end[0]) > 1e-9:
        raise ValueError("anchors must share one angle for an index-range curve")
    range_grid = np.asarray(range_grid, dtype=np.float64)
    angle = design.start[0]
    powers = received_powers(design.proj, np.full(range_grid.size, angle),
                             range_grid, cfg, grids)
    peak = powers.argmax(axis=1) + 1
    return np.stack([range_grid, peak.astype(np.float64)], axis=1)


# --- lookup estimator ---------------------------------------------------------

@dataclass(frozen=True)
class LookupTable:
    """Subcarrier-to-angle trajectory plus per-angle-bin power-to-range maps."""

    traj_angle_rad: np.ndarray            # (M,) focus angle per subcarrier
    bin_centers_rad: np.ndarray           # (B,)
    bin_power_dbm: list                   # per bin: ascending power grid
    bin_range_m: list                     # per bin: isotonic range values
    config_hash: str


def build_lookup_table(design: EndpointBeamDesign, cfg: SystemConfig,
                       grids: DerivedGrids, angle_bin_deg: float = 2.0,
                       range_step_m: float = 1.0,
                       traj_angle_step_deg: float = 0.5,
                       traj_range_points: int = 12) -> LookupTable:
    """Calibrate from noiseless sweeps of the design's own beam."""
    bound = cfg.angle_bound_rad
    # subcarrier -> angle trajectory: argmax over a coarse angle x range grid
    angles = np.deg2rad(np.arange(-math.degrees(bound),
                                  math.degrees(bound) + 1e-9, traj_angle_step_deg))
    ranges = np.geomspace(cfg.range_min_m, cfg.range_max_m, traj_range_points)
    ang_pts = np.repeat(angles, ranges.size)
    rng_pts = np.tile(ranges, angles.size)
    powers = received_powers(design.proj, ang_pts, rng_pts, cfg, grids)
    flat_best = powers.argmax(axis=0)
    traj_angle = ang_pts[flat_best]

    # per-bin range calibration from the measurement the user actually reports
    half = math.radians(angle_bin_deg) / 2.0
    centers = np.arange(-bound + half, bound, 2 * half)
    cal_ranges = np.arange(cfg.range_min_m, cfg.range_max_m + 1e-9, range_step_m)
    bin_p, bin_r = [], []
    for center in centers:
        p = received_powers(design.proj, np.full(cal_ranges.size, center),
                            cal_ranges, cfg, grids)
        w = normalized_weights(p, cfg.softmax_temperature)
        _, _, p_sel = soft_index(w, p, "eval")
        dbm = watts_to_dbm(p_sel)
        order = np.argsort(dbm, kind="stable")
        p_sorted = dbm[order]
        r_sorted = cal_ranges[order]
        fit = isotonic_regression(-r_sorted, increasing=True)
        bin_p.append(p_sorted)
        bin_r.append(-np.asarray(fit.x))
    return LookupTable(traj_angle_rad=traj_angle, bin_centers_rad=centers,
                       bin_power_dbm=bin_p, bin_range_m=bin_r,
                       config_hash=cfg.config_hash())


def lookup_estimate(msg: FeedbackMessage, table: LookupTable,
                    cfg: SystemConfig) -> PositionEstimate:
    """Angle from the index trajectory, range from the bin's monotone inverse."""
    if not 1 <= msg.subcarrier_index <= table.traj_angle_rad.size:
        raise ValueError("subcarrier index outside the calibrated band")
    angle = float(np.clip(table.traj_angle_rad[msg.subcarrier_index - 1],
                          -cfg.angle_bound_rad, cfg.angle_bound_rad))
    b = int(np.argmin(np.abs(table.bin_centers_rad - angle)))
    p_grid, r_grid = table.bin_power_dbm[b], table.bin_range_m[b]
    if len(p_grid) == 0:
        raise ValueError("empty lookup bin")
    if msg.power_dbm >= p_grid[-1]:
        rng = cfg.range_min_m
    elif msg.power_dbm <= p_grid[0]:
        rng = cfg.range_max_m
    else:
        rng = float(np.interp(msg.power_dbm, p_grid, r_grid))
    rng = float(np.clip(rng, cfg.range_min_m, cfg.range_max_m))
    return PositionEstimate(angle_rad=angle, range_m=rng)


def lookup_estimates_batch(powers_w: np.ndarray, table: LookupTable,
                           cfg: SystemConfig):
    """Vectorized lookup for a (K, M) power batch; returns (angles, ranges)."""
    w = normalized_weights(powers_w, cfg.softmax_temperature)
    _, hard_m, p_sel = soft_index(w, powers_w, "eval")
    dbm = watts_to_dbm(p_sel)
    angles = np.clip(table.traj_angle_rad[hard_m - 1],
                     -cfg.angle_bound_rad, cfg.angle_bound_rad)
    bins = np.argmin(np.abs(table.bin_centers_rad[None, :] - angles[:, None]),
                     axis=1)
    ranges = np.empty_like(dbm)
    for b in np.unique(bins):
        mask = bins == b
        p_grid, r_grid = table.bin_power_dbm[b], table.bin_range_m[b]
        r = np.interp(dbm[mask], p_grid, r_grid)
        r = np.where(dbm[mask] >= p_grid[-1], cfg.range_min_m, r)
        r = np.where(dbm[mask] <= p_grid[0], cfg.range_max_m, r)
        ranges[mask] = r
    ranges = np.clip(ranges, cfg.range_min_m, cfg.range_max_m)
    return angles, ranges
