import os

import numpy as np
import pytest

from rainbowloc.checkpoint import load_checkpoint
from rainbowloc.cli import main
from rainbowloc.dataset import load_dataset

MICRO_CONFIG = """\
# micro setup for CLI tests
carrier_freq_hz = 28e9
subcarrier_spacing_hz = 240e3
num_subcarriers = 32
num_antennas = 8
noise_psd_dbm_per_hz = -174
tx_power_dbm = 40
range_min_m = 5
range_max_m = 50
estimator_hidden = 16 12
"""


@pytest.fixture()
def cfg_file(tmp_path):
    path = tmp_path / "micro.cfg"
    path.write_text(MICRO_CONFIG)
    return str(path)


def run(*args):
    return main([str(a) for a in args])


def test_gen_data_writes_loadable_files(tmp_path, cfg_file):
    out = tmp_path / "data"
    assert run("gen-data", "--config", cfg_file, "--counts", 64, 16, 16,
               "--out", out) == 0
    for split in ("train", "val", "test"):
        ds = load_dataset(out / f"{split}.rbds")
        assert len(ds) == {"train": 64, "val": 16, "test": 16}[split]
        assert (out / f"{split}.csv").exists()


def test_train_eval_cycle(tmp_path, cfg_file, capsys):
    out = tmp_path / "run"
    assert run("train", "--config", cfg_file, "--counts", 128, 32, 32,
               "--epochs", 3, "--out", out, "--quiet") == 0
    ckpt_path = out / "learned_seed0.json"
    assert ckpt_path.exists()
    ckpt = load_checkpoint(ckpt_path)
    assert ckpt.kind == "learned"
    capsys.readouterr()
    assert run("eval", "--config", cfg_file, "--counts", 128, 32, 32,
               "--checkpoint", ckpt_path) == 0
    assert "rmse_2d" in capsys.readouterr().out


def test_train_fixed_beam_flag(tmp_path, cfg_file):
    out = tmp_path / "run"
    assert run("train", "--config", cfg_file, "--counts", 128, 32, 32,
               "--epochs", 2, "--fixed-beam", "--out", out, "--quiet") == 0
    ckpt = load_checkpoint(out / "fixed-beam_seed0.json")
    assert ckpt.kind == "analytic"


def test_beam_pattern_csv(tmp_path, cfg_file):
    out = tmp_path / "patterns"
    assert run("beam-pattern", "--config", cfg_file, "--out", out,
               "--angle-step", 10, "--range-step", 10) == 0
    lines = (out / "beam_pattern_analytic.csv").read_text().splitlines()
    assert lines[1] == "angle_deg,range_m,power_dbm"
    assert len(lines) > 10


def test_index_curve_csv(tmp_path, cfg_file):
    out = tmp_path / "curve"
    assert run("index-curve", "--config", cfg_file, "--out", out,
               "--range-step", 5) == 0
    lines = (out / "index_curve.csv").read_text().splitlines()
    assert lines[1] == "range_m,peak_subcarrier"
    assert len(lines) == 2 + 10  # 5..50 step 5


def test_overhead_report(tmp_path, capsys):
    assert run("overhead", "--paper", "--bits", 8) == 0
    out = capsys.readouterr().out
    assert "per_user_feedback_bits: 19" in out
    assert "estimator_flops: 33794" in out


def test_sweep_bits_rerun_bit_identical(tmp_path, cfg_file):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    args = ("sweep-bits", "--config", cfg_file, "--counts", 128, 32, 32,
            "--epochs", 2, "--bit-grid", 2, 8, "--seeds", 0)
    assert run(*args, "--out", out1) == 0
    assert run(*args, "--out", out2) == 0
    b1 = (out1 / "sweep_bits.csv").read_bytes()
    assert b1 == (out2 / "sweep_bits.csv").read_bytes()
    header, cols, *rows = b1.decode().splitlines()
    assert cols == "bits,method,rmse_2d_m"
    # every (bits x method) combination is present
    combos = {(r.split(",")[0], r.split(",")[1]) for r in rows}
    assert combos == {(b, m) for b in ("0", "2", "8")
                      for m in ("learned", "fixed-beam")}


def test_sweep_distance_structure_and_determinism(tmp_path, cfg_file):
    out1, out2 = tmp_path / "d1", tmp_path / "d2"
    args = ("sweep-distance", "--config", cfg_file, "--counts", 96, 24, 24,
            "--epochs", 2, "--distances", 30, 50, "--seeds", 0)
    assert run(*args, "--out", out1) == 0
    assert run(*args, "--out", out2) == 0
    b1 = (out1 / "sweep_distance.csv").read_bytes()
    assert b1 == (out2 / "sweep_distance.csv").read_bytes()
    header, cols, *rows = b1.decode().splitlines()
    assert cols == "max_distance_m,method,rmse_2d_m,angle_rmse_deg,range_rmse_m"
    combos = {(r.split(",")[0], r.split(",")[1]) for r in rows}
    assert combos == {(d, m) for d in ("30.0", "50.0")
                      for m in ("learned", "fixed-beam", "lookup")}


def test_single_point_sweep(tmp_path, cfg_file):
    out = tmp_path / "single"
    assert run("sweep-distance", "--config", cfg_file, "--counts", 96, 24, 24,
               "--epochs", 1, "--distances", 40, "--seeds", 0,
               "--out", out) == 0
    rows = (out / "sweep_distance.csv").read_text().splitlines()[2:]
    assert len(rows) == 3  # one grid point x three methods
