"""End-to-end training of the beamformer and position estimator.

The differentiable chain per batch: project raw phase/delay parameters,
form per-subcarrier received signals, add noise, softmax-select a soft
subcarrier index and soft power, normalize into features, run the MLP, and
score the 2D RMSE against ground truth.  Evaluation replaces the soft
selection with the deployed protocol (rounded index, power measured at it,
optional quantization).

Delays are internally trained against the band-center frequency: the weight
phase is written a_n - 2 pi (f_m - f_c) t_n with a_n = phi_n + 2 pi f_c t_n,
which is the same model but separates the delay gradient (bandwidth-scale
sensitivity) from the phase gradient (carrier-scale).  Checkpoints always
store the physical convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .beamformer import (ProjectedPta, PtaParams, init_pta_params, project_params,
                         sample_noise, subcarrier_sums, taped_subcarrier_sums)
from .checkpoint import Checkpoint, require_matching_config
from .config import DerivedGrids, SystemConfig, derive_grids, watts_to_dbm
from .dataset import Dataset
from .estimator import (FeatureScaler, MlpParams, apply_heads, init_mlp,
                        mlp_raw_outputs, taped_mlp)
from .feedback import (normalized_weights, quantize_power, soft_index,
                       taped_quantize_power)
from .geometry import geometry_delays, positions_to_xy, receive_gain_consts

_LN10 = math.log(10.0)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    """Optimizer and loop settings (none of these affect the physics)."""

    lr: float = 1e-3
    beam_lr_scale: float = 1.0        # phase lr relative to the estimator lr
    delay_lr_boost: float = 10.0      # delay lr = boost * lr / (pi * bandwidth)
    lr_decay: float = 0.5
    lr_patience: int = 10
    stop_patience: int = 30
    max_epochs: int = 300
    batch_size: int = 256
    noisy_training: bool = True
    compute_dtype: str = "complex64"  # heavy phasor block; rest stays float64

    def resolved_dtype(self):
        return np.complex64 if self.compute_dtype == "complex64" else np.complex128

    def resolved_delay_lr(self, cfg: SystemConfig) -> float:
        return self.delay_lr_boost * self.lr / (math.pi * cfg.bandwidth_hz)


@dataclass
class LossReport:
    rmse_2d_m: float
    angle_rmse_rad: float
    range_rmse_m: float
    per_sample_sq_err: np.ndarray

    def __str__(self):
        return (f"rmse_2d={self.rmse_2d_m:.4f} m, "
                f"angle_rmse={math.degrees(self.angle_rmse_rad):.3f} deg, "
                f"range_rmse={self.range_rmse_m:.4f} m")


def loss_rmse(estimates, truths) -> LossReport:
    """Root mean squared 2D error between estimate and truth position lists."""
    if len(estimates) == 0 or len(estimates) != len(truths):
        raise ValueError("need equal, non-empty estimate/truth lists")
    est_a = np.array([e.angle_rad for e in estimates])
    est_r = np.array([e.range_m for e in estimates])
    tru_a = np.array([t.angle_rad for t in truths])
    tru_r = np.array([t.range_m for t in truths])
    return _report(est_a, est_r, tru_a, tru_r)


def _report(est_a, est_r, tru_a, tru_r) -> LossReport:
    ex, ey = positions_to_xy(est_a, est_r)
    tx, ty = positions_to_xy(tru_a, tru_r)
    sq = (ex - tx) ** 2 + (ey - ty) ** 2
    return LossReport(
        rmse_2d_m=float(np.sqrt(sq.mean())),
        angle_rmse_rad=float(np.sqrt(((est_a - tru_a) ** 2).mean())),
        range_rmse_m=float(np.sqrt(((est_r - tru_r) ** 2).mean())),
        per_sample_sq_err=sq,
    )


class Adam:
    """Adam with one learning rate per parameter group."""

    def __init__(self, sizes, lrs, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lrs = list(lrs)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros(s) for s in sizes]
        self.v = [np.zeros(s) for s in sizes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p -= self.lrs[i] * m_hat / (np.sqrt(v_hat) + self.eps)

    def scale_lrs(self, factor):
        self.lrs = [lr * factor for lr in self.lrs]


@dataclass
class TrainState:
    pta: PtaParams
    mlp: MlpParams
    epoch: int
    best_val_rmse: float
    best_val_history: list
    history: list                      # (epoch, train_rmse, val_rmse, lr)
    rng_state: dict
    optimizer_moments: dict


class TrainingProblem:
    """Precomputed per-dataset geometry plus the taped forward builder."""

    def __init__(self, cfg: SystemConfig, grids: DerivedGrids, ds: Dataset,
                 fixed_beam: ProjectedPta | None = None):
        self.cfg = cfg
        self.grids = grids
        self.geom = geometry_delays(ds.angles_rad, ds.ranges_m, cfg, grids)
        self.consts = receive_gain_consts(ds.angles_rad, ds.ranges_m, cfg, grids)
        self.truth_x, self.truth_y = ds.cartesian()
        self.fixed_beam = fixed_beam
        self.fixed_sums = None
        if fixed_beam is not None:
            self.fixed_sums = subcarrier_sums(
                fixed_beam.phi, fixed_beam.delays, self.geom,
                grids.subcarrier_freqs_hz)

    def noiseless_powers(self, proj: ProjectedPta | None = None) -> np.ndarray:
        if proj is None:
            if self.fixed_sums is None:
                raise ValueError("no beam given")
            s = self.fixed_sums
        else:
            s = subcarrier_sums(proj.phi, proj.delays, self.geom,
                                self.grids.subcarrier_freqs_hz)
        y = self.consts * s
        return (y * np.conj(y)).real


def calibrate_power_range(powers_w: np.ndarray) -> tuple[float, float]:
    """0.5th/99.5th percentile reported powers in dBm, for the quantizer and
    the power feature scale."""
    w = normalized_weights(powers_w, 20.0)
    _, _, p_sel = soft_index(w, powers_w, "eval")
    dbm = watts_to_dbm(p_sel)
    lo, hi = np.percentile(dbm, [0.5, 99.5])
    if hi - lo < 1.0:   # degenerate spread; widen so the affine map stays sane
        lo, hi = lo - 0.5, hi + 0.5
    return float(lo), float(hi)


def _taped_soft_loss(problem: TrainingProblem, idx, noise, leaves, scaler,
                     bits, train_cfg, center_freq):
    """Build the full soft-path loss graph for one batch; returns the loss Value."""
    cfg = problem.cfg
    tape = leaves["tape"]
    m_count = cfg.num_subcarriers
    m_grid = np.arange(1, m_count + 1, dtype=np.float64)

    if "phase" in leaves:
        a_proj = ad.mod_const(leaves["phase"], 2.0 * math.pi)
        t_proj = ad.mod_const(leaves["delay"], cfg.max_delay_s)
        s = taped_subcarrier_sums(a_proj, t_proj, problem.geom[idx],
                                  problem.grids.subcarrier_freqs_hz,
                                  center_freq=center_freq,
                                  dtype=train_cfg.resolved_dtype())
        y = ad.add(ad.mul(s, problem.consts[idx]), noise)
        p = ad.abs_squared(y)
        p_max = ad.reduce_max(p, axis=1, keepdims=True)
        w = ad.softmax_scaled(ad.div(p, p_max), cfg.softmax_temperature, axis=-1)
        soft_m = ad.reduce_sum(ad.mul(w, m_grid[None, :]), axis=1)
        soft_p = ad.reduce_sum(ad.mul(w, p), axis=1)
        p_dbm = ad.scale_shift(ad.log(soft_p), 10.0 / _LN10, 30.0)
        if bits is not None:
            p_dbm = taped_quantize_power(p_dbm, bits, scaler.power_range_dbm)
        ps, po = scaler.power_scale_shift()
        js, jo = scaler.index_scale_shift()
        feats = ad.stack_cols(ad.scale_shift(p_dbm, ps, po),
                              ad.scale_shift(soft_m, js, jo))
    else:
        # frozen beam: features are constants, only the estimator trains
        p = np.abs(problem.consts[idx] * problem.fixed_sums[idx] + noise) ** 2
        w = normalized_weights(p, cfg.softmax_temperature)
        soft_m = (w * m_grid).sum(axis=1)
        soft_p = (w * p).sum(axis=1)
        p_dbm = watts_to_dbm(soft_p)
        if bits is not None:
            p_dbm = quantize_power(p_dbm, bits, scaler.power_range_dbm)
        feats = tape.leaf(scaler.features(p_dbm, soft_m))

    out = taped_mlp(leaves["mlp"], feats)
    ang = ad.scale_shift(ad.tanh(ad.take_col(out, 0)), cfg.angle_bound_rad, 0.0)
    rng_m = ad.softplus(ad.take_col(out, 1))
    est_x = ad.mul(rng_m, ad.cos(ang))
    est_y = ad.mul(rng_m, ad.sin(ang))
    dx = ad.sub(est_x, problem.truth_x[idx])
    dy = ad.sub(est_y, problem.truth_y[idx])
    sq = ad.add(ad.mul(dx, dx), ad.mul(dy, dy))
    return ad.sqrt(ad.reduce_mean(sq))


def hard_path_estimates(powers_w, mlp: MlpParams, scaler: FeatureScaler,
                        cfg: SystemConfig, bits: int | None):
    """Deployed protocol: rounded index, measured power, optional quantization."""
    w = normalized_weights(powers_w, cfg.softmax_temperature)
    _, hard_m, p_sel = soft_index(w, powers_w, "eval")
    dbm = watts_to_dbm(p_sel)
    if bits is not None:
        dbm = quantize_power(dbm, bits, scaler.power_range_dbm)
    feats = scaler.features(dbm, hard_m)
    raw = mlp_raw_outputs(mlp, feats)
    return apply_heads(raw, cfg.angle_bound_rad)


def _eval_powers(proj: ProjectedPta, ds: Dataset, cfg, grids, noise_seed):
    geom = geometry_delays(ds.angles_rad, ds.ranges_m, cfg, grids)
    consts = receive_gain_consts(ds.angles_rad, ds.ranges_m, cfg, grids)
    s = subcarrier_sums(proj.phi, proj.delays, geom, grids.subcarrier_freqs_hz)
    y = consts * s
    if noise_seed is not None:
        rng = np.random.default_rng([noise_seed, 0xE7A1])
        y = y + sample_noise(rng, y.shape, grids.per_subcarrier_noise_power_w)
    return (y * np.conj(y)).real


def evaluate_params(proj: ProjectedPta, mlp: MlpParams, scaler: FeatureScaler,
                    ds: Dataset, cfg: SystemConfig, grids: DerivedGrids,
                    bits: int | None = None, noise_seed: int | None = 0) -> LossReport:
    p = _eval_powers(proj, ds, cfg, grids, noise_seed)
    est_a, est_r = hard_path_estimates(p, mlp, scaler, cfg, bits)
    return _report(est_a, est_r, ds.angles_rad, ds.ranges_m)


def evaluate(ckpt: Checkpoint, ds: Dataset, cfg: SystemConfig | None = None,
             bits: int | None = None, noise_seed: int | None = 0) -> LossReport:
    """Deterministic hard-path RMSE of a checkpoint on a dataset."""
    cfg = cfg or ckpt.cfg
    require_matching_config(ckpt, cfg)
    if ds.config_hash != cfg.config_hash():
        raise ValueError("dataset and checkpoint configs differ")
    if ckpt.mlp is None or ckpt.scaler is None:
        raise ValueError("checkpoint has no trained estimator")
    grids = derive_grids(cfg)
    proj = project_params(ckpt.pta, cfg)
    use_bits = bits if bits is not None else ckpt.quant_bits
    return evaluate_params(proj, ckpt.mlp, ckpt.scaler, ds, cfg, grids,
                           bits=use_bits, noise_seed=noise_seed)


def train(train_ds: Dataset, val_ds: Dataset, cfg: SystemConfig,
          train_cfg: TrainConfig | None = None, bits: int | None = None,
          fixed_beam: ProjectedPta | None = None,
          init_beam: ProjectedPta | None = None, seed: int | None = None,
          log_path=None, verbose: bool = False) -> tuple[TrainState, Checkpoint]:
    """Joint (or estimator-only, when ``fixed_beam`` is given) training.

    ``init_beam`` warm-starts the trainable beam from a physical design;
    otherwise the ramp-plus-random-phase initializer is used.  Deterministic
    for fixed (seed, data): identical reruns produce identical parameters.
    Returns the state and a checkpoint built from the best validation epoch.
    """
    train_cfg = train_cfg or TrainConfig()
    seed = cfg.rng_seed if seed is None else seed
    grids = derive_grids(cfg)
    for ds in (train_ds, val_ds):
        if ds.config_hash != cfg.config_hash():
            raise ValueError(f"{ds.split} dataset config hash mismatch")

    problem = TrainingProblem(cfg, grids, train_ds, fixed_beam)
    rng_init = np.random.default_rng([seed, 0x1217])
    rng_shuffle = np.random.default_rng([seed, 0x5F5F])
    rng_noise = np.random.default_rng([seed, 0xA0A0])

    train_beam = fixed_beam is None
    if train_beam:
        if init_beam is not None:
            t_start = np.mod(init_beam.delays, cfg.max_delay_s)
            phase = np.mod(init_beam.phi - 2.0 * math.pi * cfg.carrier_freq_hz
                           * t_start, 2.0 * math.pi)
            delay = t_start.copy()
        else:
            pta0 = init_pta_params(cfg, rng_init)
            phase = pta0.theta_phi.copy()    # band-center phases (see module doc)
            delay = pta0.theta_t.copy()
        start_proj = _centered_to_physical(phase, delay, cfg)
    else:
        phase = delay = None
        start_proj = fixed_beam

    cal_powers = problem.noiseless_powers(start_proj if train_beam else None)
    scaler = FeatureScaler(power_range_dbm=calibrate_power_range(cal_powers),
                           num_subcarriers=cfg.num_subcarriers)
    mlp = init_mlp(cfg, rng_init, mean_range_m=float(train_ds.ranges_m.mean()))

    params = ([phase, delay] if train_beam else []) + mlp.flat_parameters()
    lrs = ([train_cfg.lr * train_cfg.beam_lr_scale,
            train_cfg.resolved_delay_lr(cfg) * train_cfg.beam_lr_scale]
           if train_beam else []) \
        + [train_cfg.lr] * (len(params) - (2 if train_beam else 0))
    adam = Adam([p.shape for p in params], lrs)

    noise_var = grids.per_subcarrier_noise_power_w
    k_train = len(train_ds)
    batch = min(train_cfg.batch_size, k_train)
    val_noise_seed = seed  # evaluation stream is separate from training noise

    def val_rmse_of(mlp_now, proj_now) -> float:
        return evaluate_params(proj_now, mlp_now, scaler, val_ds, cfg, grids,
                               bits=bits, noise_seed=val_noise_seed).rmse_2d_m

    def current_proj() -> ProjectedPta:
        if train_beam:
            return _centered_to_physical(phase, delay, cfg)
        return fixed_beam

    best_val = val_rmse_of(mlp, current_proj())
    best_params = ([phase.copy(), delay.copy()] if train_beam else []) \
        + [p.copy() for p in mlp.flat_parameters()]
    best_val_history = [best_val]
    history = []
    since_best = 0
    since_decay = 0

    epoch = 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng_shuffle.permutation(k_train)
        batch_losses = []
        for lo in range(0, k_train - batch + 1, batch):
            idx = order[lo:lo + batch]
            noise = sample_noise(rng_noise, (idx.size, cfg.num_subcarriers),
                                 noise_var) if train_cfg.noisy_training else \
                np.zeros((idx.size, cfg.num_subcarriers), dtype=np.complex128)
            tape = ad.Tape()
            leaves = {"tape": tape, "mlp": [tape.leaf(p) for p in mlp.flat_parameters()]}
            if train_beam:
                leaves["phase"] = tape.leaf(phase)
                leaves["delay"] = tape.leaf(delay)
            loss = _taped_soft_loss(problem, idx, noise, leaves, scaler, bits,
                                    train_cfg, cfg.carrier_freq_hz)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} (lr={adam.lrs[0]:.2e})")
            tape.backward(loss)
            leaf_list = ([leaves["phase"], leaves["delay"]] if train_beam else []) \
                + leaves["mlp"]
            adam.step(params, [lv.grad for lv in leaf_list])
            batch_losses.append(float(loss.data))

        val = val_rmse_of(mlp, current_proj())
        history.append((epoch, float(np.mean(batch_losses)), val, adam.lrs[-1]))
        if verbose and (epoch % 10 == 0 or epoch == 1):
            print(f"epoch {epoch:4d}  train {np.mean(batch_losses):8.4f}  "
                  f"val {val:8.4f}  lr {adam.lrs[-1]:.2e}")
        if val < best_val - 1e-12:
            best_val = val
            best_val_history.append(val)
            best_params = ([phase.copy(), delay.copy()] if train_beam else []) \
                + [p.copy() for p in mlp.flat_parameters()]
            since_best = 0
            since_decay = 0
        else:
            since_best += 1
            since_decay += 1
        if since_decay >= train_cfg.lr_patience:
            adam.scale_lrs(train_cfg.lr_decay)
            since_decay = 0
        if since_best >= train_cfg.stop_patience:
            break

    # restore the best-validation parameters
    cursor = 0
    if train_beam:
        phase[...] = best_params[0]
        delay[...] = best_params[1]
        cursor = 2
    for p, bp in zip(mlp.flat_parameters(), best_params[cursor:]):
        p[...] = bp

    final_proj = current_proj()
    if train_beam:
        t_proj = np.mod(delay, cfg.max_delay_s)
        pta = PtaParams(
            theta_phi=np.mod(phase, 2.0 * math.pi)
            + 2.0 * math.pi * cfg.carrier_freq_hz * t_proj,
            theta_t=delay.copy(),
        )
    else:
        pta = PtaParams(theta_phi=fixed_beam.phi.copy(),
                        theta_t=fixed_beam.delays.copy())

    state = TrainState(
        pta=pta, mlp=mlp, epoch=epoch, best_val_rmse=best_val,
        best_val_history=best_val_history, history=history,
        rng_state={"seed": seed},
        optimizer_moments={"m": adam.m, "v": adam.v, "t": adam.t},
    )
    ckpt = Checkpoint(
        cfg=cfg, pta=pta, kind="learned" if train_beam else "analytic",
        mlp=mlp, scaler=scaler, quant_bits=bits,
        meta={"seed": seed, "epochs": epoch, "best_val_rmse": best_val,
              "beam_trained": train_beam},
    )
    if log_path is not None:
        write_training_log(log_path, history, cfg, seed)
    # consistency: the checkpointed parameters must reproduce the final beam
    assert np.allclose(project_params(pta, cfg).delays, final_proj.delays)
    return state, ckpt


def _centered_to_physical(phase, delay, cfg: SystemConfig) -> ProjectedPta:
    """Convert band-center phases to the physical phase-shifter convention."""
    t_proj = np.mod(delay, cfg.max_delay_s)
    phi = np.mod(np.mod(phase, 2.0 * math.pi)
                 + 2.0 * math.pi * cfg.carrier_freq_hz * t_proj, 2.0 * math.pi)
    return ProjectedPta(phi=phi, delays=t_proj)


def write_training_log(path, history, cfg: SystemConfig, seed: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={cfg.config_hash()} seed={seed}\n")
        fh.write("epoch,train_rmse,val_rmse,lr\n")
        for epoch, tr, vl, lr in history:
            fh.write(f"{epoch},{tr!r},{vl!r},{lr!r}\n")
