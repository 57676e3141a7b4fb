"""User-position datasets: sampling, binary persistence, CSV export.

Positions are drawn uniformly over the configured angular sector and range
interval.  A (seed, split) pair fully determines the sample stream, so any
dataset can be regenerated bit-identically from its header alone.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .geometry import positions_to_xy

_MAGIC = b"RBLOCDS1"
_VERSION = 1
_SPLIT_IDS = {"train": 0, "val": 1, "test": 2}


class DatasetError(ValueError):
    """Corrupt file, bad header, or configuration hash mismatch."""


@dataclass(frozen=True)
class Dataset:
    """Columns: angle_rad, range_m; one row per user."""

    positions: np.ndarray
    split: str
    seed: int
    config_hash: str

    def __post_init__(self):
        self.positions.flags.writeable = False

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def angles_rad(self) -> np.ndarray:
        return self.positions[:, 0]

    @property
    def ranges_m(self) -> np.ndarray:
        return self.positions[:, 1]

    def cartesian(self) -> tuple[np.ndarray, np.ndarray]:
        return positions_to_xy(self.angles_rad, self.ranges_m)


def sample_users(count: int, cfg: SystemConfig, seed: int,
                 split: str = "train") -> Dataset:
    """Uniform positions over the service sector, deterministic under (seed, split)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if split not in _SPLIT_IDS:
        raise ValueError(f"split must be one of {sorted(_SPLIT_IDS)}")
    if cfg.range_min_m <= 0 or cfg.range_max_m <= cfg.range_min_m:
        raise ValueError("invalid range bounds")
    rng = np.random.default_rng([seed, _SPLIT_IDS[split]])
    angles = rng.uniform(-cfg.angle_bound_rad, cfg.angle_bound_rad, count)
    ranges = rng.uniform(cfg.range_min_m, cfg.range_max_m, count)
    return Dataset(positions=np.stack([angles, ranges], axis=1), split=split,
                   seed=seed, config_hash=cfg.config_hash())


def make_splits(cfg: SystemConfig, counts: tuple[int, int, int],
                seed: int) -> tuple[Dataset, Dataset, Dataset]:
    train, val, test = (sample_users(c, cfg, seed, s)
                        for c, s in zip(counts, ("train", "val", "test")))
    return train, val, test


def save_dataset(ds: Dataset, path) -> None:
    header = struct.pack(
        ">8sH64s8sqQ", _MAGIC, _VERSION, ds.config_hash.encode("ascii"),
        ds.split.encode("ascii").ljust(8), ds.seed, len(ds))
    body = np.ascontiguousarray(ds.positions, dtype=">f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


def load_dataset(path, cfg: SystemConfig | None = None) -> Dataset:
    """Read a dataset file; verifies magic, length, and (if given) the config hash."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head_size = struct.calcsize(">8sH64s8sqQ")
    if len(blob) < head_size:
        raise DatasetError("file too short for a dataset header")
    magic, version, hash_b, split_b, seed, count = struct.unpack(
        ">8sH64s8sqQ", blob[:head_size])
    if magic != _MAGIC:
        raise DatasetError("not a dataset file (bad magic)")
    if version != _VERSION:
        raise DatasetError(f"unsupported dataset version {version}")
    expected = head_size + count * 16
    if len(blob) != expected:
        raise DatasetError(
            f"truncated or padded dataset: {len(blob)} bytes, expected {expected}")
    config_hash = hash_b.decode("ascii")
    if cfg is not None and cfg.config_hash() != config_hash:
        raise DatasetError("dataset was generated under a different configuration")
    positions = np.frombuffer(blob[head_size:], dtype=">f8").astype(
        np.float64).reshape(count, 2)
    return Dataset(positions=positions, split=split_b.decode("ascii").strip(),
                   seed=seed, config_hash=config_hash)


def export_csv(ds: Dataset, path) -> None:
    x, y = ds.cartesian()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={ds.config_hash} seed={ds.seed} split={ds.split}\n")
        fh.write("angle_deg,range_m,x_m,y_m\n")
        for a, r, xi, yi in zip(np.degrees(ds.angles_rad), ds.ranges_m, x, y):
            fh.write(f"{float(a)!r},{float(r)!r},{float(xi)!r},{float(yi)!r}\n")
