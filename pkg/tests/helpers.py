"""Shared test utilities: finite differences and a prewired toy problem."""

from __future__ import annotations

import numpy as np

from rainbowloc import autodiff as ad
from rainbowloc.beamformer import (init_pta_params, project_params, sample_noise)
from rainbowloc.config import derive_grids, toy_config
from rainbowloc.dataset import sample_users
from rainbowloc.estimator import FeatureScaler, init_mlp
from rainbowloc.training import (TrainConfig, TrainingProblem, _taped_soft_loss,
                                 calibrate_power_range)


def central_diff(fn, arr, i, eps):
    """Central finite difference of scalar fn w.r.t. arr.flat[i], in place."""
    flat = arr.reshape(-1)
    orig = flat[i]
    flat[i] = orig + eps
    fp = fn()
    flat[i] = orig - eps
    fm = fn()
    flat[i] = orig
    return (fp - fm) / (2.0 * eps)


def rel_err(ad_grad, fd_grad):
    return abs(ad_grad - fd_grad) / (abs(ad_grad) + 1e-12)


class ToyChain:
    """Toy end-to-end problem: 4 antennas, 8 subcarriers, 20 users.

    Exposes the full soft-path loss as a function of the trainable leaves so
    gradients can be probed one parameter at a time.  Noise is frozen so the
    loss is a deterministic function of the parameters.
    """

    def __init__(self, seed=0, quant_bits=None, center="carrier"):
        self.cfg = toy_config(rng_seed=seed)
        self.grids = derive_grids(self.cfg)
        self.ds = sample_users(20, self.cfg, 0, "train")
        self.problem = TrainingProblem(self.cfg, self.grids, self.ds)
        rng = np.random.default_rng(seed)
        self.pta = init_pta_params(self.cfg, rng)
        self.mlp = init_mlp(self.cfg, rng,
                            mean_range_m=float(self.ds.ranges_m.mean()))
        proj0 = project_params(self.pta, self.cfg)
        self.scaler = FeatureScaler(
            calibrate_power_range(self.problem.noiseless_powers(proj0)),
            self.cfg.num_subcarriers)
        self.noise = sample_noise(
            np.random.default_rng(seed + 1000), (20, self.cfg.num_subcarriers),
            self.grids.per_subcarrier_noise_power_w)
        self.quant_bits = quant_bits
        self.center_freq = self.cfg.carrier_freq_hz if center == "carrier" else 0.0
        self.train_cfg = TrainConfig(compute_dtype="complex128")

    def loss(self, with_grads=False):
        tape = ad.Tape()
        leaves = {
            "tape": tape,
            "phase": tape.leaf(self.pta.theta_phi),
            "delay": tape.leaf(self.pta.theta_t),
            "mlp": [tape.leaf(p) for p in self.mlp.flat_parameters()],
        }
        loss = _taped_soft_loss(self.problem, np.arange(len(self.ds)), self.noise,
                                leaves, self.scaler, self.quant_bits,
                                self.train_cfg, self.center_freq)
        if with_grads:
            tape.backward(loss)
            return float(loss.data), leaves
        return float(loss.data)

    def parameter_packs(self, delay_eps_scale=1e-6):
        """(array, leaf-key, flat-index eps) triples covering every parameter."""
        packs = [("phase", self.pta.theta_phi, 1e-6),
                 ("delay", self.pta.theta_t, delay_eps_scale * self.cfg.max_delay_s)]
        for j, p in enumerate(self.mlp.flat_parameters()):
            packs.append((("mlp", j), p, 1e-6))
        return packs

    def grad_of(self, leaves, key):
        if key == "phase":
            return leaves["phase"].grad
        if key == "delay":
            return leaves["delay"].grad
        return leaves["mlp"][key[1]].grad
