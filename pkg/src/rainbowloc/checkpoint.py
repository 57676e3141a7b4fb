"""Versioned JSON checkpoints shared by learned and analytic beam designs.

One file holds the raw beamformer parameters, the estimator weights (when
present), feature-normalization constants, the full system configuration
with its hash, and free-form metadata.  Python's JSON float formatting
round-trips doubles exactly, so reruns reproduce checkpoints bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .beamformer import PtaParams
from .config import SystemConfig
from .estimator import FeatureScaler, MlpParams

_FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable file or configuration hash mismatch."""


@dataclass
class Checkpoint:
    cfg: SystemConfig
    pta: PtaParams
    kind: str = "learned"                 # "learned" or "analytic"
    mlp: MlpParams | None = None
    scaler: FeatureScaler | None = None
    quant_bits: int | None = None
    meta: dict = dataclasses.field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return self.cfg.config_hash()


def _config_to_dict(cfg: SystemConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["estimator_hidden"] = list(cfg.estimator_hidden)
    return d


def _config_from_dict(d: dict) -> SystemConfig:
    d = dict(d)
    d["estimator_hidden"] = tuple(d["estimator_hidden"])
    return SystemConfig(**d)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    doc = {
        "format_version": _FORMAT_VERSION,
        "kind": ckpt.kind,
        "config_hash": ckpt.config_hash,
        "config": _config_to_dict(ckpt.cfg),
        "theta_phi": ckpt.pta.theta_phi.tolist(),
        "theta_t": ckpt.pta.theta_t.tolist(),
        "quant_bits": ckpt.quant_bits,
        "meta": ckpt.meta,
    }
    if ckpt.mlp is not None:
        doc["mlp"] = {
            "hidden_activation": ckpt.mlp.hidden_activation,
            "weights": [w.tolist() for w in ckpt.mlp.weights],
            "biases": [b.tolist() for b in ckpt.mlp.biases],
        }
    if ckpt.scaler is not None:
        doc["scaler"] = {
            "power_range_dbm": list(ckpt.scaler.power_range_dbm),
            "num_subcarriers": ckpt.scaler.num_subcarriers,
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable checkpoint: {exc}") from exc
    if doc.get("format_version") != _FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version "
                              f"{doc.get('format_version')!r}")
    cfg = _config_from_dict(doc["config"])
    if cfg.config_hash() != doc["config_hash"]:
        raise CheckpointError("checkpoint config hash does not match its config")
    pta = PtaParams(theta_phi=np.asarray(doc["theta_phi"], dtype=np.float64),
                    theta_t=np.asarray(doc["theta_t"], dtype=np.float64))
    mlp = None
    if "mlp" in doc:
        mlp = MlpParams(
            weights=[np.asarray(w, dtype=np.float64) for w in doc["mlp"]["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in doc["mlp"]["biases"]],
            hidden_activation=doc["mlp"]["hidden_activation"],
        )
    scaler = None
    if "scaler" in doc:
        scaler = FeatureScaler(
            power_range_dbm=tuple(doc["scaler"]["power_range_dbm"]),
            num_subcarriers=int(doc["scaler"]["num_subcarriers"]),
        )
    return Checkpoint(cfg=cfg, pta=pta, kind=doc.get("kind", "learned"),
                      mlp=mlp, scaler=scaler, quant_bits=doc.get("quant_bits"),
                      meta=doc.get("meta", {}))


def require_matching_config(ckpt: Checkpoint, cfg: SystemConfig) -> None:
    if ckpt.config_hash != cfg.config_hash():
        raise CheckpointError("checkpoint and requested config hashes differ")
