"""System constants, frequency/antenna grids, and config file handling.

Every other module reads its physical constants from a SystemConfig, which is
immutable after construction.  Grids derived from it (subcarrier frequencies,
antenna offsets, per-subcarrier transmit amplitude and noise power) live in
DerivedGrids, also immutable.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

SPEED_OF_LIGHT = 3.0e8  # m/s, exact by convention here


class ConfigError(ValueError):
    """Raised when a configuration is missing keys or violates an invariant."""


def dbm_to_watts(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watts_to_dbm(p_watts):
    return 10.0 * np.log10(p_watts) + 30.0


@dataclass(frozen=True)
class SystemConfig:
    """Physical and array constants plus estimator/training-facing knobs.

    Angle convention: "boresight" places angle 0 perpendicular to the array
    (users sampled in [-angle_bound, +angle_bound] around broadside);
    "axis" measures angles from the array axis itself.
    """

    carrier_freq_hz: float
    bandwidth_hz: float
    subcarrier_spacing_hz: float
    num_antennas: int
    num_subcarriers: int
    noise_psd_dbm_per_hz: float
    tx_power_dbm: float
    range_min_m: float
    range_max_m: float
    speed_of_light_m_per_s: float = SPEED_OF_LIGHT
    angle_bound_rad: float = math.pi / 3.0
    softmax_temperature: float = 20.0
    quantization_bits: int | None = None
    rng_seed: int = 0
    angle_convention: str = "boresight"
    estimator_hidden: tuple[int, ...] = (64, 128, 64)

    def __post_init__(self):
        if self.num_antennas < 2:
            raise ConfigError("num_antennas must be >= 2")
        if self.num_subcarriers < 2:
            raise ConfigError("num_subcarriers must be >= 2")
        for name in ("carrier_freq_hz", "bandwidth_hz", "subcarrier_spacing_hz",
                     "speed_of_light_m_per_s", "range_min_m", "softmax_temperature"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.range_max_m <= self.range_min_m:
            raise ConfigError("range_max_m must exceed range_min_m")
        if not 0 < self.angle_bound_rad <= math.pi / 2:
            raise ConfigError("angle_bound_rad must lie in (0, pi/2]")
        grid_bw = self.num_subcarriers * self.subcarrier_spacing_hz
        if abs(grid_bw - self.bandwidth_hz) > 1e-9 * self.bandwidth_hz:
            raise ConfigError(
                f"num_subcarriers * subcarrier_spacing must equal bandwidth "
                f"({grid_bw:.6g} != {self.bandwidth_hz:.6g})")
        if self.quantization_bits is not None and not 1 <= self.quantization_bits <= 16:
            raise ConfigError("quantization_bits must be in [1, 16]")
        if self.angle_convention not in ("boresight", "axis"):
            raise ConfigError("angle_convention must be 'boresight' or 'axis'")
        if len(self.estimator_hidden) < 1 or any(h < 1 for h in self.estimator_hidden):
            raise ConfigError("estimator_hidden must be a non-empty tuple of widths")

    @property
    def antenna_spacing_m(self) -> float:
        """Half-wavelength element pitch d = c / (2 f_c)."""
        return self.speed_of_light_m_per_s / (2.0 * self.carrier_freq_hz)

    @property
    def max_delay_s(self) -> float:
        """Physical range of a per-antenna delay element (one OFDM symbol period)."""
        return 1.0 / self.subcarrier_spacing_hz

    @property
    def tx_power_w(self) -> float:
        return dbm_to_watts(self.tx_power_dbm)

    @property
    def noise_power_per_subcarrier_w(self) -> float:
        return dbm_to_watts(self.noise_psd_dbm_per_hz) * self.subcarrier_spacing_hz

    def config_hash(self) -> str:
        """SHA-256 over every field except rng_seed.

        Seeds are deliberately excluded so that checkpoints and datasets
        produced under different seeds of the same physical setup match.
        """
        parts = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name == "rng_seed":
                continue
            parts.append(f"{f.name}={getattr(self, f.name)!r}")
        return hashlib.sha256("\n".join(parts).encode()).hexdigest()


@dataclass(frozen=True)
class DerivedGrids:
    """Frequency and spatial grids derived from a SystemConfig.

    subcarrier_freqs_hz[m-1] = f_c + (2m - 1 - M)/2 * f_scs for m in 1..M.
    antenna_offsets[n-1]     = n - (N+1)/2 for n in 1..N (units of the pitch d).
    """

    subcarrier_freqs_hz: np.ndarray
    antenna_offsets: np.ndarray
    per_subcarrier_tx_amplitude: np.ndarray
    per_subcarrier_noise_power_w: float

    def __post_init__(self):
        for arr in (self.subcarrier_freqs_hz, self.antenna_offsets,
                    self.per_subcarrier_tx_amplitude):
            arr.flags.writeable = False


def derive_grids(cfg: SystemConfig) -> DerivedGrids:
    m = np.arange(1, cfg.num_subcarriers + 1, dtype=np.float64)
    freqs = cfg.carrier_freq_hz + (2.0 * m - 1.0 - cfg.num_subcarriers) / 2.0 \
        * cfg.subcarrier_spacing_hz
    n = np.arange(1, cfg.num_antennas + 1, dtype=np.float64)
    offsets = n - (cfg.num_antennas + 1) / 2.0
    # equal power split across subcarriers
    amp = np.full(cfg.num_subcarriers, math.sqrt(cfg.tx_power_w / cfg.num_subcarriers))
    return DerivedGrids(
        subcarrier_freqs_hz=freqs,
        antenna_offsets=offsets,
        per_subcarrier_tx_amplitude=amp,
        per_subcarrier_noise_power_w=cfg.noise_power_per_subcarrier_w,
    )


def rayleigh_distance(cfg: SystemConfig) -> float:
    """2 D^2 / lambda with aperture D = (N-1) d."""
    d = cfg.antenna_spacing_m
    aperture = (cfg.num_antennas - 1) * d
    lam = cfg.speed_of_light_m_per_s / cfg.carrier_freq_hz
    return 2.0 * aperture**2 / lam


# --- config file handling -------------------------------------------------

_REQUIRED_KEYS = (
    "carrier_freq_hz", "num_antennas", "num_subcarriers",
    "noise_psd_dbm_per_hz", "tx_power_dbm", "range_min_m", "range_max_m",
)

_FLOAT_KEYS = {
    "carrier_freq_hz", "bandwidth_hz", "subcarrier_spacing_hz",
    "noise_psd_dbm_per_hz", "tx_power_dbm", "range_min_m", "range_max_m",
    "speed_of_light_m_per_s", "angle_bound_rad", "softmax_temperature",
}
_INT_KEYS = {"num_antennas", "num_subcarriers", "quantization_bits", "rng_seed"}


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def build_config(raw) -> SystemConfig:
    """Build a validated SystemConfig from a text blob or a key/value dict.

    Exactly one of bandwidth_hz / subcarrier_spacing_hz may be omitted; the
    missing one is derived from num_subcarriers.
    """
    if isinstance(raw, str):
        raw = parse_config_text(raw)
    kv = dict(raw)

    missing = [k for k in _REQUIRED_KEYS if k not in kv]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    if "bandwidth_hz" not in kv and "subcarrier_spacing_hz" not in kv:
        raise ConfigError("need bandwidth_hz and/or subcarrier_spacing_hz")

    kwargs = {}
    for key, value in kv.items():
        if key in _FLOAT_KEYS:
            try:
                kwargs[key] = float(value)
            except ValueError as exc:
                raise ConfigError(f"{key}: not a number: {value!r}") from exc
        elif key in _INT_KEYS:
            try:
                kwargs[key] = int(value)
            except ValueError as exc:
                raise ConfigError(f"{key}: not an integer: {value!r}") from exc
        elif key == "angle_convention":
            kwargs[key] = str(value)
        elif key == "estimator_hidden":
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            kwargs[key] = tuple(int(v) for v in value)
        else:
            raise ConfigError(f"unknown config key: {key}")

    m = kwargs["num_subcarriers"]
    if "bandwidth_hz" not in kwargs:
        kwargs["bandwidth_hz"] = m * kwargs["subcarrier_spacing_hz"]
    if "subcarrier_spacing_hz" not in kwargs:
        kwargs["subcarrier_spacing_hz"] = kwargs["bandwidth_hz"] / m
    return SystemConfig(**kwargs)


def load_config(path) -> SystemConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return build_config(fh.read())


def paper_scale_config(**overrides) -> SystemConfig:
    """Full-scale setup: 256 antennas, 1584 subcarriers, 5-300 m service region."""
    base = dict(
        carrier_freq_hz=28e9,
        bandwidth_hz=380.16e6,
        subcarrier_spacing_hz=240e3,
        num_antennas=256,
        num_subcarriers=1584,
        noise_psd_dbm_per_hz=-174.0,
        tx_power_dbm=40.0,
        range_min_m=5.0,
        range_max_m=300.0,
    )
    base.update(overrides)
    return SystemConfig(**base)


def desk_scale_config(**overrides) -> SystemConfig:
    """Reduced setup for CI and quick experiments: 64 antennas, 256 subcarriers, 5-50 m."""
    base = dict(
        carrier_freq_hz=28e9,
        bandwidth_hz=256 * 240e3,
        subcarrier_spacing_hz=240e3,
        num_antennas=64,
        num_subcarriers=256,
        noise_psd_dbm_per_hz=-174.0,
        tx_power_dbm=40.0,
        range_min_m=5.0,
        range_max_m=50.0,
    )
    base.update(overrides)
    return SystemConfig(**base)


def toy_config(**overrides) -> SystemConfig:
    """Minimal setup for gradient checks and fast unit tests."""
    base = dict(
        carrier_freq_hz=28e9,
        bandwidth_hz=8 * 240e3,
        subcarrier_spacing_hz=240e3,
        num_antennas=4,
        num_subcarriers=8,
        noise_psd_dbm_per_hz=-174.0,
        tx_power_dbm=40.0,
        range_min_m=5.0,
        range_max_m=50.0,
        estimator_hidden=(16, 12),
    )
    base.update(overrides)
    return SystemConfig(**base)


def with_overrides(cfg: SystemConfig, **overrides) -> SystemConfig:
    return replace(cfg, **overrides)
