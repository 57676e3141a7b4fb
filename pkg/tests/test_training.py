import math

import numpy as np
import pytest

import rainbowloc.training as training_mod
from rainbowloc.beamformer import project_params
from rainbowloc.checkpoint import (CheckpointError, load_checkpoint,
                                   save_checkpoint)
from rainbowloc.config import build_config, derive_grids, desk_scale_config
from rainbowloc.dataset import make_splits, sample_users
from rainbowloc.estimator import PositionEstimate
from rainbowloc.experiments import default_fixed_beam
from rainbowloc.geometry import UserPosition
from rainbowloc.training import (LossReport, TrainConfig, TrainingDiverged,
                                 evaluate, evaluate_params, loss_rmse, train)

MICRO = build_config(dict(
    carrier_freq_hz=28e9, subcarrier_spacing_hz=240e3, num_subcarriers=32,
    num_antennas=8, noise_psd_dbm_per_hz=-174.0, tx_power_dbm=40.0,
    range_min_m=5.0, range_max_m=50.0, estimator_hidden=(16, 12)))

FAST = TrainConfig(max_epochs=8, batch_size=64, compute_dtype="complex128")


@pytest.fixture(scope="module")
def micro_splits():
    return make_splits(MICRO, (256, 64, 64), 0)


@pytest.fixture(scope="module")
def trained(micro_splits):
    tr, va, _ = micro_splits
    return train(tr, va, MICRO, FAST, seed=0)


# --- loss -----------------------------------------------------------------------

def test_loss_rmse_perfect_and_simple_cases():
    truth = [UserPosition(0.2, 10.0), UserPosition(-0.1, 20.0)]
    perfect = [PositionEstimate(0.2, 10.0), PositionEstimate(-0.1, 20.0)]
    assert loss_rmse(perfect, truth).rmse_2d_m == pytest.approx(0.0, abs=1e-12)

    truth1 = [UserPosition(0.0, 1.0)]            # cartesian (1, 0)
    origin_like = [PositionEstimate(0.0, 1e-300)]
    assert loss_rmse(origin_like, truth1).rmse_2d_m == pytest.approx(1.0)


def test_loss_rmse_mean_then_root():
    # squared errors 1 and 3 -> sqrt(2)
    truth = [UserPosition(0.0, 1.0), UserPosition(0.0, 1.0)]
    est = [PositionEstimate(0.0, 2.0),
           PositionEstimate(math.pi / 2, math.sqrt(2.0))]
    rep = loss_rmse(est, truth)
    assert rep.per_sample_sq_err == pytest.approx([1.0, 3.0])
    assert rep.rmse_2d_m == pytest.approx(math.sqrt(2.0))


def test_loss_rmse_recomposition():
    rng = np.random.default_rng(0)
    truth = [UserPosition(a, r) for a, r in
             zip(rng.uniform(-1, 1, 50), rng.uniform(5, 50, 50))]
    est = [PositionEstimate(a + 0.01 * rng.standard_normal(),
                            r + rng.standard_normal())
           for a, r in [(t.angle_rad, t.range_m) for t in truth]]
    rep = loss_rmse(est, truth)
    assert rep.rmse_2d_m == pytest.approx(
        math.sqrt(rep.per_sample_sq_err.mean()), rel=1e-12)


def test_loss_rmse_rejects_bad_batches():
    with pytest.raises(ValueError):
        loss_rmse([], [])
    with pytest.raises(ValueError):
        loss_rmse([PositionEstimate(0.0, 1.0)], [])


# --- training -------------------------------------------------------------------

def test_training_improves_validation(trained):
    state, _ = trained
    assert state.best_val_rmse < state.best_val_history[0]


def test_best_val_history_non_increasing(trained):
    state, _ = trained
    hist = state.best_val_history
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_training_loss_on_train_set_not_worse_than_untrained(micro_splits, trained):
    tr, va, _ = micro_splits
    _, ckpt = trained
    grids = derive_grids(MICRO)
    trained_rep = evaluate(ckpt, tr, noise_seed=0)
    # untrained reference: same init seeds, zero epochs
    state0, ckpt0 = train(tr, va, MICRO,
                          TrainConfig(max_epochs=0, compute_dtype="complex128"),
                          seed=0)
    untrained_rep = evaluate(ckpt0, tr, noise_seed=0)
    assert trained_rep.rmse_2d_m <= untrained_rep.rmse_2d_m


def test_training_reproducible(micro_splits):
    tr, va, _ = micro_splits
    cfgs = TrainConfig(max_epochs=3, batch_size=64, compute_dtype="complex128")
    s1, c1 = train(tr, va, MICRO, cfgs, seed=4)
    s2, c2 = train(tr, va, MICRO, cfgs, seed=4)
    assert np.array_equal(c1.pta.theta_phi, c2.pta.theta_phi)
    assert np.array_equal(c1.pta.theta_t, c2.pta.theta_t)
    for w1, w2 in zip(c1.mlp.weights, c2.mlp.weights):
        assert np.array_equal(w1, w2)
    assert s1.history == s2.history


def test_training_history_logged(tmp_path, micro_splits):
    tr, va, _ = micro_splits
    cfgs = TrainConfig(max_epochs=2, batch_size=64, compute_dtype="complex128")
    log = tmp_path / "log.csv"
    train(tr, va, MICRO, cfgs, seed=1, log_path=log)
    lines = log.read_text().splitlines()
    assert lines[0].startswith(f"# config_hash={MICRO.config_hash()}")
    assert lines[1] == "epoch,train_rmse,val_rmse,lr"
    assert len(lines) == 2 + 2


def test_fixed_beam_training_freezes_beam(micro_splits):
    tr, va, _ = micro_splits
    design = default_fixed_beam(MICRO)
    _, ckpt = train(tr, va, MICRO, FAST, seed=0, fixed_beam=design.proj)
    assert ckpt.kind == "analytic"
    assert np.array_equal(ckpt.pta.theta_phi, design.proj.phi)
    assert np.array_equal(ckpt.pta.theta_t, design.proj.delays)


def test_quantization_aware_training_runs(micro_splits):
    tr, va, te = micro_splits
    _, ckpt = train(tr, va, MICRO, FAST, seed=0, bits=4)
    assert ckpt.quant_bits == 4
    rep = evaluate(ckpt, te, noise_seed=0)   # uses the stored bit width
    assert np.isfinite(rep.rmse_2d_m)


def test_divergence_aborts_with_diagnostic(micro_splits, monkeypatch):
    tr, va, _ = micro_splits
    real = training_mod._taped_soft_loss

    def nan_loss(problem, idx, noise, leaves, scaler, bits, tci, center):
        out = real(problem, idx, noise, leaves, scaler, bits, tci, center)
        out.data = np.float64("nan")
        return out

    monkeypatch.setattr(training_mod, "_taped_soft_loss", nan_loss)
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(tr, va, MICRO, FAST, seed=0)


def test_mismatched_dataset_rejected(micro_splits):
    tr, va, _ = micro_splits
    other = sample_users(16, desk_scale_config(), 0, "train")
    with pytest.raises(ValueError, match="hash"):
        train(other, va, MICRO, FAST, seed=0)


# --- evaluation and checkpoints ---------------------------------------------------

def test_evaluate_deterministic(trained, micro_splits):
    _, ckpt = trained
    te = micro_splits[2]
    r1 = evaluate(ckpt, te, noise_seed=11)
    r2 = evaluate(ckpt, te, noise_seed=11)
    assert r1.rmse_2d_m == r2.rmse_2d_m
    assert np.array_equal(r1.per_sample_sq_err, r2.per_sample_sq_err)


def test_evaluate_report_consistency(trained, micro_splits):
    _, ckpt = trained
    rep = evaluate(ckpt, micro_splits[2], noise_seed=0)
    assert rep.rmse_2d_m == pytest.approx(
        math.sqrt(rep.per_sample_sq_err.mean()), rel=1e-12)


def test_checkpoint_roundtrip_preserves_evaluation(tmp_path, trained, micro_splits):
    _, ckpt = trained
    te = micro_splits[2]
    before = evaluate(ckpt, te, noise_seed=3)
    path = tmp_path / "ck.json"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    after = evaluate(back, te, noise_seed=3)
    assert before.rmse_2d_m == after.rmse_2d_m
    assert back.meta["seed"] == ckpt.meta["seed"]


def test_checkpoint_hash_guard(tmp_path, trained):
    _, ckpt = trained
    other_ds = sample_users(16, desk_scale_config(), 0, "test")
    with pytest.raises(ValueError, match="config"):
        evaluate(ckpt, other_ds, noise_seed=0)
    path = tmp_path / "ck.json"
    save_checkpoint(ckpt, path)
    text = path.read_text().replace('"kind": "learned"', '"kind": "learned" ')
    corrupt = tmp_path / "bad.json"
    corrupt.write_text(text[:-30])
    with pytest.raises(CheckpointError):
        load_checkpoint(corrupt)


def test_checkpoint_beam_matches_trained_beam(trained, micro_splits):
    # the stored physical parameters reproduce the final training-time beam
    state, ckpt = trained
    grids = derive_grids(MICRO)
    proj = project_params(ckpt.pta, MICRO)
    te = micro_splits[2]
    direct = evaluate_params(proj, ckpt.mlp, ckpt.scaler, te, MICRO, grids,
                             noise_seed=5)
    via_ckpt = evaluate(ckpt, te, noise_seed=5)
    assert direct.rmse_2d_m == via_ckpt.rmse_2d_m
