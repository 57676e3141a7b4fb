import numpy as np
import pytest

from rainbowloc.config import desk_scale_config, paper_scale_config
from rainbowloc.dataset import (Dataset, DatasetError, export_csv,
                                load_dataset, make_splits, sample_users,
                                save_dataset)

CFG = desk_scale_config()


def test_positions_inside_bounds():
    ds = sample_users(5000, CFG, 3)
    assert np.all(np.abs(ds.angles_rad) <= CFG.angle_bound_rad)
    assert np.all(ds.ranges_m >= CFG.range_min_m)
    assert np.all(ds.ranges_m <= CFG.range_max_m)


def test_sampling_deterministic():
    a = sample_users(100, CFG, 7)
    b = sample_users(100, CFG, 7)
    assert np.array_equal(a.positions, b.positions)
    c = sample_users(100, CFG, 8)
    assert not np.array_equal(a.positions, c.positions)
    d1 = sample_users(1, CFG, 7)
    d2 = sample_users(1, CFG, 7)
    assert np.array_equal(d1.positions, d2.positions)


def test_sampling_uniformity():
    ds = sample_users(100_000, CFG, 1)
    assert abs(np.degrees(ds.angles_rad.mean())) < 1.0
    # uniform range: mean near the interval midpoint
    mid = (CFG.range_min_m + CFG.range_max_m) / 2
    span = CFG.range_max_m - CFG.range_min_m
    assert abs(ds.ranges_m.mean() - mid) < 0.01 * span


def test_splits_disjoint():
    tr, va, te = make_splits(CFG, (2000, 500, 500), 0)
    rows = {tuple(r) for r in tr.positions}
    assert not any(tuple(r) in rows for r in va.positions)
    assert not any(tuple(r) in rows for r in te.positions)
    assert tr.split == "train" and va.split == "val" and te.split == "test"


def test_bad_arguments():
    with pytest.raises(ValueError):
        sample_users(0, CFG, 0)
    with pytest.raises(ValueError):
        sample_users(10, CFG, 0, split="holdout")


def test_roundtrip_bit_identical(tmp_path):
    ds = sample_users(777, CFG, 5, "val")
    path = tmp_path / "val.rbds"
    save_dataset(ds, path)
    back = load_dataset(path, CFG)
    assert np.array_equal(back.positions, ds.positions)
    assert back.split == ds.split
    assert back.seed == ds.seed
    assert back.config_hash == ds.config_hash
    # byte-level determinism of the container as well
    save_dataset(back, tmp_path / "val2.rbds")
    assert (tmp_path / "val.rbds").read_bytes() == (tmp_path / "val2.rbds").read_bytes()


def test_load_rejects_config_mismatch(tmp_path):
    ds = sample_users(10, CFG, 5)
    path = tmp_path / "d.rbds"
    save_dataset(ds, path)
    with pytest.raises(DatasetError, match="configuration"):
        load_dataset(path, paper_scale_config())


def test_load_rejects_corruption(tmp_path):
    ds = sample_users(10, CFG, 5)
    path = tmp_path / "d.rbds"
    save_dataset(ds, path)
    blob = path.read_bytes()

    truncated = tmp_path / "t.rbds"
    truncated.write_bytes(blob[:-7])
    with pytest.raises(DatasetError, match="truncated"):
        load_dataset(truncated)

    bad_magic = tmp_path / "m.rbds"
    bad_magic.write_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(DatasetError, match="magic"):
        load_dataset(bad_magic)

    short = tmp_path / "s.rbds"
    short.write_bytes(blob[:20])
    with pytest.raises(DatasetError, match="short"):
        load_dataset(short)


def test_csv_export(tmp_path):
    ds = sample_users(4, CFG, 2)
    path = tmp_path / "d.csv"
    export_csv(ds, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "angle_deg,range_m,x_m,y_m"
    assert len(lines) == 2 + len(ds)
    first = [float(v) for v in lines[2].split(",")]
    assert first[1] == pytest.approx(ds.ranges_m[0])


def test_positions_immutable():
    ds = sample_users(3, CFG, 0)
    with pytest.raises(ValueError):
        ds.positions[0, 0] = 1.0
