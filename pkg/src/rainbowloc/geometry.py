"""Near-field geometry and line-of-sight channel synthesis.

A user is described by a polar position (angle, range) relative to the array
center.  Per-antenna propagation distances use the second-order spherical
wavefront expansion

    r_n = r - x_n d cos(theta_ax) + (x_n d)^2 sin^2(theta_ax) / (2 r)

where theta_ax is measured from the array axis.  Under the default
"boresight" convention user angles are taken relative to broadside and
shifted by +pi/2 before entering this formula.  All channel math is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DerivedGrids, SystemConfig


@dataclass(frozen=True)
class UserPosition:
    """Polar user coordinates; cartesian values are derived at construction."""

    angle_rad: float
    range_m: float

    def __post_init__(self):
        if self.range_m <= 0:
            raise ValueError("range_m must be positive")

    @property
    def x_m(self) -> float:
        return self.range_m * math.cos(self.angle_rad)

    @property
    def y_m(self) -> float:
        return self.range_m * math.sin(self.angle_rad)

    @property
    def cartesian(self) -> tuple[float, float]:
        return (self.x_m, self.y_m)


def positions_to_xy(angles_rad, ranges_m):
    """Vectorized polar -> cartesian for truth/estimate arrays."""
    angles_rad = np.asarray(angles_rad, dtype=np.float64)
    ranges_m = np.asarray(ranges_m, dtype=np.float64)
    return ranges_m * np.cos(angles_rad), ranges_m * np.sin(angles_rad)


def axis_angle(angle_rad, cfg: SystemConfig):
    """Map a user-facing angle to the array-axis convention used by the physics."""
    if cfg.angle_convention == "boresight":
        return np.asarray(angle_rad, dtype=np.float64) + math.pi / 2.0
    return np.asarray(angle_rad, dtype=np.float64)


def element_distance_quadratic(range_m, axis_angle_rad, offset_m):
    """Second-order propagation distance from an element at offset x_n d.

    Arguments broadcast; ``offset_m`` is the signed element coordinate
    x_n * d in meters, ``axis_angle_rad`` the angle from the array axis.
    """
    r = np.asarray(range_m, dtype=np.float64)
    cs = np.cos(axis_angle_rad)
    sn = np.sin(axis_angle_rad)
    return r - offset_m * cs + (offset_m * sn) ** 2 / (2.0 * r)


def element_distance_exact(range_m, axis_angle_rad, offset_m):
    """Exact Euclidean distance oracle for the quadratic approximation."""
    r = np.asarray(range_m, dtype=np.float64)
    ux = r * np.cos(axis_angle_rad) - offset_m
    uy = r * np.sin(axis_angle_rad)
    return np.hypot(ux, uy)


def element_distances(pos: UserPosition, cfg: SystemConfig, grids: DerivedGrids,
                      exact: bool = False) -> np.ndarray:
    """Distances from every array element to one user (length N)."""
    offsets_m = grids.antenna_offsets * cfg.antenna_spacing_m
    theta_ax = axis_angle(pos.angle_rad, cfg)
    fn = element_distance_exact if exact else element_distance_quadratic
    return fn(pos.range_m, theta_ax, offsets_m)


def geometry_delays(angles_rad, ranges_m, cfg: SystemConfig,
                    grids: DerivedGrids) -> np.ndarray:
    """Per-antenna excess propagation delays (r_{k,n} - r_k)/c, shape (K, N).

    This is the only per-user geometry the beamforming sum needs; it is
    computed once per dataset and reused across training steps.
    """
    angles_rad = np.atleast_1d(np.asarray(angles_rad, dtype=np.float64))
    ranges_m = np.atleast_1d(np.asarray(ranges_m, dtype=np.float64))
    offsets_m = grids.antenna_offsets * cfg.antenna_spacing_m
    theta_ax = axis_angle(angles_rad, cfg)
    rn = element_distance_quadratic(ranges_m[:, None], theta_ax[:, None],
                                    offsets_m[None, :])
    return (rn - ranges_m[:, None]) / cfg.speed_of_light_m_per_s


def path_loss(ranges_m, grids: DerivedGrids, cfg: SystemConfig) -> np.ndarray:
    """Free-space amplitude gain beta = c / (4 pi f_m r), shape (K, M)."""
    ranges_m = np.atleast_1d(np.asarray(ranges_m, dtype=np.float64))
    return cfg.speed_of_light_m_per_s / (
        4.0 * math.pi * grids.subcarrier_freqs_hz[None, :] * ranges_m[:, None])


def array_response(pos: UserPosition, m: int, cfg: SystemConfig,
                   grids: DerivedGrids) -> np.ndarray:
    """Unit-modulus steering vector for subcarrier m (1-based), length N."""
    if not 1 <= m <= cfg.num_subcarriers:
        raise ValueError(f"subcarrier index {m} out of range 1..{cfg.num_subcarriers}")
    f_m = grids.subcarrier_freqs_hz[m - 1]
    rn = element_distances(pos, cfg, grids)
    delta = rn - pos.range_m
    return np.exp(-2j * math.pi * f_m * delta / cfg.speed_of_light_m_per_s)


@dataclass(frozen=True)
class ChannelMatrix:
    """LoS channel h[m, n] for one user plus its per-subcarrier path loss."""

    h: np.ndarray          # (M, N) complex128
    beta: np.ndarray       # (M,) real amplitude gain

    def __post_init__(self):
        self.h.flags.writeable = False
        self.beta.flags.writeable = False


def channel_matrix(pos: UserPosition, cfg: SystemConfig,
                   grids: DerivedGrids) -> ChannelMatrix:
    """h[m] = beta_m * exp(j 2 pi f_m r / c) * a_m(pos)."""
    if pos.range_m <= 0:
        raise ValueError("range_m must be positive")
    freqs = grids.subcarrier_freqs_hz
    c = cfg.speed_of_light_m_per_s
    beta = (c / (4.0 * math.pi * freqs * pos.range_m))
    rn = element_distances(pos, cfg, grids)
    delta = (rn - pos.range_m) / c
    phase = 2.0 * math.pi * freqs[:, None] * (pos.range_m / c - delta[None, :])
    h = beta[:, None] * np.exp(1j * phase)
    return ChannelMatrix(h=h, beta=beta)


def receive_gain_consts(angles_rad, ranges_m, cfg: SystemConfig,
                        grids: DerivedGrids) -> np.ndarray:
    """Complex per-user, per-subcarrier constants C[k, m] with

        y[k, m] = C[k, m] * sum_n exp(j(phi_n - 2 pi f_m (t_n - tau_{k,n}))) + noise

    where tau is the output of :func:`geometry_delays`.  Bundles path loss,
    the transmit amplitude, and the global carrier phase of the channel.
    """
    ranges_m = np.atleast_1d(np.asarray(ranges_m, dtype=np.float64))
    freqs = grids.subcarrier_freqs_hz
    beta = path_loss(ranges_m, grids, cfg)
    phase = -2.0 * math.pi * freqs[None, :] * ranges_m[:, None] / cfg.speed_of_light_m_per_s
    return beta * grids.per_subcarrier_tx_amplitude[None, :] * np.exp(1j * phase)
