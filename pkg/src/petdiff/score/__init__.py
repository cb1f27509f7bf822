"""Conditional denoiser interface, analytic score oracle, losses and training."""

from .denoiser import (
    ConditionStack,
    Denoiser,
    KarrasNetDenoiser,
    PreconditionCoeffs,
    VpNetDenoiser,
    denoiser_forward,
    precondition_coeffs,
)
from .losses import (
    EdmDraws,
    VpDraws,
    edm_loss,
    edm_loss_and_grads,
    sample_edm_draws,
    sample_vp_draws,
    vp_dsm_loss,
    vp_dsm_loss_and_grads,
)
from .mixture import GaussianMixture, GmmDenoiser, gmm_log_density, gmm_score
from .net import ConvDenoiserNet
from .serialize import load_model, save_model, write_loss_trace
from .training import SliceDataset, TrainingConfig, TrainingResult, train_denoiser

__all__ = [
    "ConditionStack",
    "ConvDenoiserNet",
    "Denoiser",
    "EdmDraws",
    "GaussianMixture",
    "GmmDenoiser",
    "KarrasNetDenoiser",
    "PreconditionCoeffs",
    "SliceDataset",
    "TrainingConfig",
    "TrainingResult",
    "VpDraws",
    "VpNetDenoiser",
    "denoiser_forward",
    "edm_loss",
    "edm_loss_and_grads",
    "gmm_log_density",
    "gmm_score",
    "load_model",
    "precondition_coeffs",
    "sample_edm_draws",
    "sample_vp_draws",
    "save_model",
    "train_denoiser",
    "vp_dsm_loss",
    "vp_dsm_loss_and_grads",
    "write_loss_trace",
]
