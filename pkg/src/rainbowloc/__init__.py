"""Single-shot wideband user localization with trainable rainbow beams.

Synthesizes near-field OFDM channels for a phase-shifter plus true-time-delay
transmit array, treats the hardware settings as trainable parameters, and
jointly optimizes the frequency-dependent beam together with a small position
estimator against 2D localization RMSE.
"""

from .config import (SystemConfig, DerivedGrids, build_config, derive_grids,
                     desk_scale_config, paper_scale_config, rayleigh_distance,
                     toy_config)
from .beamformer import PtaParams, ProjectedPta, project_params
from .dataset import Dataset, sample_users
from .training import TrainConfig, evaluate, loss_rmse, train

__version__ = "0.1.0"

__all__ = [
    "SystemConfig", "DerivedGrids", "build_config", "derive_grids",
    "desk_scale_config", "paper_scale_config", "toy_config",
    "rayleigh_distance", "PtaParams", "ProjectedPta", "project_params",
    "Dataset", "sample_users", "TrainConfig", "train", "evaluate", "loss_rmse",
    "__version__",
]
