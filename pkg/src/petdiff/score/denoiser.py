"""Conditional denoiser interface and sigma-dependent preconditioning.

The denoiser abstraction carries both views of the same model: the
``denoise`` form ``D(x, sigma, y)`` used by the sigma-parameterized
sampler, and the ``score`` form ``s(x, t, y)`` used by the VP sampler.
Concrete models implement whichever forms they support; the analytic
mixture oracle implements both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from ..sde import VpSchedule, vp_kernel_moments


@dataclass(frozen=True)
class PreconditionCoeffs:
    """Input/output/skip scalings wrapping the raw network at noise level sigma."""

    c_skip: float
    c_out: float
    c_in: float
    c_noise: float


def precondition_coeffs(sigma: float, sigma_data: float) -> PreconditionCoeffs:
    """Scaling coefficients for the denoiser wrapper at noise level ``sigma``.

    c_skip = sd^2 / (sigma^2 + sd^2)
    c_out  = sigma * sd / sqrt(sigma^2 + sd^2)
    c_in   = 1 / sqrt(sigma^2 + sd^2)
    c_noise = ln(sigma) / 4

    so that ``c_skip * x`` recovers ``x`` as ``sigma -> 0`` (with
    ``c_out -> 0``) and the network input/output stay unit-scale.
    """
    sigma = float(sigma)
    sigma_data = float(sigma_data)
    if sigma <= 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if sigma_data <= 0.0:
        raise DomainError(f"sigma_data must be positive, got {sigma_data}")
    var_sum = sigma**2 + sigma_data**2
    return PreconditionCoeffs(
        c_skip=sigma_data**2 / var_sum,
        c_out=sigma * sigma_data / np.sqrt(var_sum),
        c_in=1.0 / np.sqrt(var_sum),
        c_noise=float(np.log(sigma)) / 4.0,
    )


class ConditionStack:
    """Ordered conditioning channels for one target slice.

    ``channels`` is a ``(C, H, W)`` array; ``layout`` names each channel
    (e.g. ``t1w[-1], t1w[0], t1w[+1], pet1pct[-1], ...``).  Valid channel
    counts are 3, 6 or 9: three adjacent slices per contrast, for one to
    three contrasts.
    """

    VALID_COUNTS = (3, 6, 9)

    def __init__(self, channels, layout):
        channels = np.asarray(channels)
        if channels.ndim != 3:
            raise ValueError(f"channels must be (C, H, W), got shape {channels.shape}")
        if channels.shape[0] not in self.VALID_COUNTS:
            raise ValueError(
                f"channel count must be one of {self.VALID_COUNTS}, got {channels.shape[0]}"
            )
        if len(layout) != channels.shape[0]:
            raise ValueError("layout length must match channel count")
        self.channels = channels
        self.layout = tuple(layout)

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def spatial_shape(self):
        return self.channels.shape[1:]


class Denoiser:
    """Interface for conditional denoisers / score models.

    ``denoise(x, sigma, cond)`` returns the denoised estimate of clean
    data given ``x = clean + sigma * eps``.  ``score(x, t, cond)``
    returns the score of the VP-perturbed marginal at time ``t``.  Both
    are deterministic given their inputs and fixed parameters, and
    preserve the input shape.
    """

    def denoise(self, x, sigma, cond=None):
        raise NotImplementedError(f"{type(self).__name__} does not implement denoise()")

    def score(self, x, t, cond=None):
        raise NotImplementedError(f"{type(self).__name__} does not implement score()")


def denoiser_forward(raw_net, x, sigma, cond=None, *, sigma_data: float):
    """Apply the preconditioning wrapper around a raw network.

    D(x, sigma, y) = c_skip * x + c_out * F(c_in * x; c_noise, y)

    ``raw_net`` is called as ``raw_net(x_scaled, c_noise, cond)`` and must
    return an array of the same shape as ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    c = precondition_coeffs(sigma, sigma_data)
    cond_channels = None
    if cond is not None:
        cond_channels = cond.channels if isinstance(cond, ConditionStack) else np.asarray(cond)
        if cond_channels.shape[-2:] != x.shape[-2:]:
            raise ValueError(
                f"condition spatial shape {cond_channels.shape[-2:]} != input {x.shape[-2:]}"
            )
    f_out = np.asarray(raw_net(c.c_in * x, c.c_noise, cond_channels))
    if f_out.shape != x.shape:
        raise ValueError(f"network output shape {f_out.shape} != input shape {x.shape}")
    return c.c_skip * x + c.c_out * f_out


class KarrasNetDenoiser(Denoiser):
    """Trainable denoiser in the sigma parameterization."""

    def __init__(self, net, sigma_data: float = 0.5):
        self.net = net
        self.sigma_data = float(sigma_data)

    def denoise(self, x, sigma, cond=None):
        return denoiser_forward(self.net, x, sigma, cond, sigma_data=self.sigma_data)


class VpNetDenoiser(Denoiser):
    """Trainable VP score model in the noise-prediction parameterization.

    The network predicts the forward noise ``eps``; the score is the
    exact conversion ``-eps_hat / std(t)``.
    """

    def __init__(self, net, schedule: VpSchedule):
        self.net = net
        self.schedule = schedule

    def noise_estimate(self, x, t, cond=None):
        x = np.asarray(x, dtype=np.float64)
        cond_channels = cond.channels if isinstance(cond, ConditionStack) else cond
        return np.asarray(self.net(x, float(t), cond_channels))

    def score(self, x, t, cond=None):
        std = vp_kernel_moments(self.schedule, t).std
        if std == 0.0:
            raise DomainError(f"score undefined at t={t} (std=0)")
        return -self.noise_estimate(x, t, cond) / std
