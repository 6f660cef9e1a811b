"""Sparse-view CT reconstruction by generalized (cold) diffusion.

Fan-beam projection and FBP, the sparse-view degradation operator, a small
trainable residual restorer with error-propagating composite training, and
sequential / dual-phase samplers.
"""

from .degrade import DEFAULT_VIEWS, DegradeConfig, Degrader, SeverityMap, degrade, degrade_views
from .estimator import DiffusionReconstructor, SparseViewDegrader
from .exceptions import (
    ConfigurationError,
    FormatError,
    InvalidInputError,
    InvalidLevelError,
    NumericalError,
    SparseCTError,
)
from .metrics import psnr, rmse_hu, ssim, streak_energy
from .phantoms import random_ellipse_phantom, shepp_logan
from .restorer import (
    Architecture,
    IdentityRestorer,
    NoisyOracleRestorer,
    OracleRestorer,
    ReferenceRestorer,
    RestorerState,
    reference_restore,
)
from .sampler import SampleTrace, SpdpsConfig, sequential_sample, spdps_sample
from .tomo import FanGeometry, Image, Sinogram, backproject, fbp_reconstruct, forward_project
from .training import EmaState, TrainConfig, ema_update, epct_compose, epct_loss, restore_loss, train

__version__ = "0.1.0"

__all__ = [
    "Architecture", "ConfigurationError", "DEFAULT_VIEWS", "DegradeConfig", "Degrader",
    "DiffusionReconstructor", "EmaState", "FanGeometry", "FormatError", "IdentityRestorer", "Image",
    "InvalidInputError", "InvalidLevelError", "NoisyOracleRestorer", "NumericalError", "OracleRestorer",
    "ReferenceRestorer", "RestorerState", "SampleTrace", "SeverityMap", "Sinogram", "SparseCTError",
    "SparseViewDegrader", "SpdpsConfig", "TrainConfig", "backproject", "degrade", "degrade_views",
    "ema_update", "epct_compose", "epct_loss", "fbp_reconstruct", "forward_project", "psnr",
    "random_ellipse_phantom", "reference_restore", "restore_loss", "rmse_hu", "sequential_sample",
    "shepp_logan", "spdps_sample", "ssim", "streak_energy", "train",
]
