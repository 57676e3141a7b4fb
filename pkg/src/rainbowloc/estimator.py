"""Position estimator: a small fully connected network with bounded heads.

Input features are the reported power (dBm, affine-scaled to roughly [-1, 1]
by the quantizer calibration range) and the reported subcarrier index
(centered and scaled by M/2).  The two outputs pass through
angle = bound * tanh(.) and range = softplus(.), which enforce the service
sector structurally for any finite weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import SystemConfig


@dataclass(frozen=True)
class PositionEstimate:
    angle_rad: float
    range_m: float

    @property
    def x_m(self) -> float:
        return self.range_m * math.cos(self.angle_rad)

    @property
    def y_m(self) -> float:
        return self.range_m * math.sin(self.angle_rad)


@dataclass
class MlpParams:
    """Weights and biases for dims in -> hidden... -> out, plus activation kind."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases],
                         self.hidden_activation)

    def flat_parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_mlp(cfg: SystemConfig, rng: np.random.Generator,
             mean_range_m: float | None = None) -> MlpParams:
    """He-style uniform fan-in init; the range-head bias starts at the
    softplus preimage of the mean training range so early outputs sit near
    the data's center of mass."""
    dims = (2,) + tuple(cfg.estimator_hidden) + (2,)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if mean_range_m is not None:
        biases[-1][1] = softplus_inverse(mean_range_m)
    return MlpParams(weights=weights, biases=biases)


def softplus_inverse(y: float) -> float:
    if y <= 0:
        raise ValueError("softplus is positive")
    return float(np.log(np.expm1(y)))


def _softplus(x):
    return np.logaddexp(0.0, x)


def mlp_raw_outputs(params: MlpParams, features: np.ndarray) -> np.ndarray:
    """Pre-head network outputs, shape (B, 2)."""
    if params.hidden_activation != "relu":
        raise ValueError(f"unsupported activation {params.hidden_activation!r}")
    h = np.asarray(features, dtype=np.float64)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b[None, :]
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def apply_heads(raw: np.ndarray, angle_bound_rad: float):
    """Map raw outputs to (angle in [-bound, bound], range > 0)."""
    angles = angle_bound_rad * np.tanh(raw[:, 0])
    ranges = _softplus(raw[:, 1])
    return angles, ranges


def mlp_forward(params: MlpParams, features: np.ndarray,
                cfg: SystemConfig) -> list[PositionEstimate]:
    """Estimate positions for a (B, 2) feature batch."""
    raw = mlp_raw_outputs(params, np.atleast_2d(features))
    angles, ranges = apply_heads(raw, cfg.angle_bound_rad)
    return [PositionEstimate(float(a), float(r)) for a, r in zip(angles, ranges)]


def taped_mlp(param_values: list[ad.Value], features: ad.Value,
              hidden_activation: str = "relu") -> ad.Value:
    """Differentiable forward through leaf-wrapped parameters.

    ``param_values`` interleaves weight and bias leaves exactly as produced
    by ``MlpParams.flat_parameters``.
    """
    if hidden_activation != "relu":
        raise ValueError(f"unsupported activation {hidden_activation!r}")
    layers = len(param_values) // 2
    h = features
    for i in range(layers):
        w, b = param_values[2 * i], param_values[2 * i + 1]
        h = ad.bias_add(ad.matmul(h, w), b)
        if i < layers - 1:
            h = ad.relu(h)
    return h


@dataclass(frozen=True)
class FeatureScaler:
    """Affine feature normalization, stored with every checkpoint."""

    power_range_dbm: tuple[float, float]
    num_subcarriers: int

    def power_scale_shift(self) -> tuple[float, float]:
        p_min, p_max = self.power_range_dbm
        scale = 2.0 / (p_max - p_min)
        return scale, -1.0 - scale * p_min

    def index_scale_shift(self) -> tuple[float, float]:
        m = self.num_subcarriers
        scale = 2.0 / m
        return scale, -scale * (m + 1) / 2.0

    def features(self, power_dbm, index) -> np.ndarray:
        """Normalized (B, 2) feature matrix from raw dBm powers and indices."""
        ps, po = self.power_scale_shift()
        js, jo = self.index_scale_shift()
        power_dbm = np.atleast_1d(np.asarray(power_dbm, dtype=np.float64))
        index = np.atleast_1d(np.asarray(index, dtype=np.float64))
        return np.stack([ps * power_dbm + po, js * index + jo], axis=1)


def flops_count(params: MlpParams) -> int:
    """Operation count per forward pass under the documented convention:
    2 * in * out multiply-adds plus `out` bias adds per layer, plus one
    activation evaluation per hidden unit (output heads not counted)."""
    total = 0
    last = len(params.weights) - 1
    for i, w in enumerate(params.weights):
        fan_in, fan_out = w.shape
        total += 2 * fan_in * fan_out + fan_out
        if i < last:
            total += fan_out
    return total
