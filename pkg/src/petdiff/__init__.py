"""Conditional score-based PET synthesis and clinical evaluation toolkit.

Submodules
----------
sde        noise schedules and forward-process perturbation kernels
score      denoiser interface, analytic mixture oracle, losses, training
sampling   predictor-corrector and stochastic Heun reverse samplers
phantom    synthetic paired phantoms, dose thinning, normalization
metrics    SUVR / asymmetry / congruence / ICC / line-profile metrics
report     cohort evaluation reports (CSV, JSON, text)
cli        command-line pipeline entry points
"""

from . import metrics, phantom, report, sampling, score, sde, volume_io
from .errors import (
    ConfigError,
    DomainError,
    SamplerDivergenceError,
    SingularityError,
    TrainingDivergedError,
)
from .volume_io import RoiLabelMap, Volume

__all__ = [
    "ConfigError",
    "DomainError",
    "RoiLabelMap",
    "SamplerDivergenceError",
    "SingularityError",
    "TrainingDivergedError",
    "Volume",
    "metrics",
    "phantom",
    "report",
    "sampling",
    "score",
    "sde",
    "volume_io",
]

__version__ = "0.1.0"
