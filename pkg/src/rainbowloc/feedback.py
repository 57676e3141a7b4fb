"""User-side measurement: soft subcarrier selection and power quantization.

A user observes per-subcarrier received powers, forms a temperature-scaled
softmax over them (after scaling to unit maximum, so one temperature works
across the whole service region), and reports the rounded soft index plus
the corresponding power.  During training the unrounded soft index and the
softmax-averaged power keep the chain differentiable; at evaluation the
rounded index and the power actually measured at it are used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import SystemConfig, watts_to_dbm


@dataclass(frozen=True)
class FeedbackMessage:
    """One uplink report: subcarrier index (1-based) and a power in dBm."""

    subcarrier_index: int
    power_dbm: float
    bits_used: int | None = None


def softmax_weights(powers, alpha: float) -> np.ndarray:
    """w_m = exp(alpha p_m) / sum exp(alpha p_m'), max-subtracted for stability."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    p = np.asarray(powers, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite powers")
    z = alpha * p
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def normalized_weights(powers_w, alpha: float) -> np.ndarray:
    """Softmax weights over powers scaled to unit maximum (last axis)."""
    p = np.asarray(powers_w, dtype=np.float64)
    return softmax_weights(p / p.max(axis=-1, keepdims=True), alpha)


def round_half_away(x):
    """Round with ties going away from zero (0.5 -> 1, 3.5 -> 4)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def soft_index(weights, powers, mode: str = "eval"):
    """Soft and rounded subcarrier selection.

    Returns (soft_m, hard_m, power): soft_m = sum w_m * m with m in 1..M,
    hard_m its half-away-from-zero rounding clipped to [1, M].  The power is
    the entry at hard_m in "eval" mode and the softmax average sum w_m p_m in
    "train" mode.
    """
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(powers, dtype=np.float64)
    if mode not in ("eval", "train"):
        raise ValueError("mode must be 'eval' or 'train'")
    m_count = w.shape[-1]
    m_grid = np.arange(1, m_count + 1, dtype=np.float64)
    soft_m = (w * m_grid).sum(axis=-1)
    hard_m = np.clip(round_half_away(soft_m), 1, m_count).astype(np.int64)
    if mode == "train":
        power = (w * p).sum(axis=-1)
    else:
        flat_p = p.reshape(-1, m_count)
        flat_h = np.atleast_1d(hard_m).reshape(-1)
        power = flat_p[np.arange(flat_p.shape[0]), flat_h - 1] \
            .reshape(np.shape(soft_m))
    if np.ndim(soft_m) == 0:
        return float(soft_m), int(hard_m), float(power)
    return soft_m, hard_m, power


def quantize_power(power_dbm, bits: int, p_range) -> np.ndarray:
    """Uniform mid-rise quantizer over [p_min, p_max] dBm; outputs cell midpoints.

    Out-of-range inputs clamp to the edge cells.
    """
    p_min, p_max = float(p_range[0]), float(p_range[1])
    if not 1 <= bits <= 16:
        raise ValueError("bits must be in [1, 16]")
    if not p_min < p_max:
        raise ValueError("invalid quantizer range")
    levels = 2 ** bits
    width = (p_max - p_min) / levels
    code = np.clip(np.floor((np.asarray(power_dbm) - p_min) / width), 0, levels - 1)
    return p_min + (code + 0.5) * width


def taped_quantize_power(x: ad.Value, bits: int, p_range) -> ad.Value:
    """Quantizer with straight-through (identity) gradient for training."""
    out = quantize_power(x.data, bits, p_range)
    return x.tape.record((x,), out, lambda g: (g,))


def user_feedback(powers_w, cfg: SystemConfig, bits: int | None = None,
                  quant_range=None) -> FeedbackMessage:
    """Full measurement for one user's power vector (watts), returning dBm."""
    _, hard_m, power_w = soft_index(
        normalized_weights(powers_w, cfg.softmax_temperature), powers_w, "eval")
    power_dbm = float(watts_to_dbm(power_w))
    if bits is not None:
        if quant_range is None:
            raise ValueError("quantized feedback needs a calibration range")
        power_dbm = float(quantize_power(power_dbm, bits, quant_range))
    return FeedbackMessage(subcarrier_index=int(hard_m), power_dbm=power_dbm,
                           bits_used=bits)


# --- wire format and overhead accounting --------------------------------------

def index_bits(num_subcarriers: int) -> int:
    return math.ceil(math.log2(num_subcarriers))


def per_user_feedback_bits(num_subcarriers: int, bits: int) -> int:
    """Uplink bits per user: one subcarrier index plus one quantized power."""
    return index_bits(num_subcarriers) + bits


def encode_feedback(msg: FeedbackMessage, num_subcarriers: int,
                    p_range) -> bytes:
    """Pack (index, power code) into ceil((index_bits + b)/8) bytes, big-endian."""
    if msg.bits_used is None:
        raise ValueError("message carries an unquantized power")
    if not 1 <= msg.subcarrier_index <= num_subcarriers:
        raise ValueError("subcarrier index out of range")
    p_min, p_max = float(p_range[0]), float(p_range[1])
    levels = 2 ** msg.bits_used
    width = (p_max - p_min) / levels
    code = int(np.clip(np.floor((msg.power_dbm - p_min) / width), 0, levels - 1))
    ib = index_bits(num_subcarriers)
    word = ((msg.subcarrier_index - 1) << msg.bits_used) | code
    nbytes = (ib + msg.bits_used + 7) // 8
    return word.to_bytes(nbytes, "big")


def decode_feedback(data: bytes, num_subcarriers: int, bits: int,
                    p_range) -> FeedbackMessage:
    word = int.from_bytes(data, "big")
    code = word & (2 ** bits - 1)
    index = (word >> bits) + 1
    if not 1 <= index <= num_subcarriers:
        raise ValueError("decoded subcarrier index out of range")
    p_min, p_max = float(p_range[0]), float(p_range[1])
    width = (p_max - p_min) / 2 ** bits
    return FeedbackMessage(subcarrier_index=index,
                           power_dbm=p_min + (code + 0.5) * width,
                           bits_used=bits)
