"""Latent binary-feature models for mixed categorical/real relational data.

Fits a Bayesian model in which every row and column of a mixed relational
matrix carries a latent binary feature vector, low-rank bilinear maps turn
feature pairs into cell means (through a multinomial probit link for
categorical cells), and a sparse-factor multivariate probit prior correlates
features across rows and across columns.  Inference is by Gibbs sampling
with a Metropolis-Hastings step for restricted noise covariances.
"""

from .config import RunConfig, load_config
from .data import (
    ColumnStandardization,
    RelationalDataset,
    HeldOutCell,
    hold_out,
    load_dataset,
    save_dataset,
    standardize_real,
)
from .estimator import LatentFeatureModel
from .gibbs import run
from .trace import PosteriorTrace

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "load_config",
    "RelationalDataset",
    "ColumnStandardization",
    "HeldOutCell",
    "hold_out",
    "load_dataset",
    "save_dataset",
    "standardize_real",
    "LatentFeatureModel",
    "run",
    "PosteriorTrace",
    "__version__",
]
