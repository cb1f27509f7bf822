"""Noise schedules and forward-process perturbation kernels.

Two noise parameterizations are supported:

* A variance-preserving (VP) scheme with a linear ``beta(t)`` rate.  The
  forward SDE is

      dx = -0.5 * beta(t) * x dt + sqrt(beta(t)) dw,

  whose transition kernel at time ``t`` is Gaussian with a closed-form
  mean factor ``exp(-0.5 * int_beta(t))`` applied to the clean data and
  standard deviation ``sqrt(1 - exp(-int_beta(t)))``.

* A Karras-style sequence of noise levels ``sigma_i`` decreasing from
  ``sigma_max`` to ``sigma_min`` on a power-law grid, with a terminal 0
  appended, for use with a denoiser parameterized directly in ``sigma``.

Schedule math is done in float64; image payloads elsewhere are float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SingularityError


@dataclass(frozen=True)
class VpSchedule:
    """Linear-rate variance-preserving noise schedule.

    ``beta(t) = beta_min + t * (beta_max - beta_min)`` for continuous
    ``t`` in ``[t_min, t_max]``.  ``t_min > 0`` keeps the sampler away
    from the ``std -> 0`` singularity at ``t = 0``.
    """

    beta_min: float = 0.1
    beta_max: float = 20.0
    t_min: float = 1e-3
    t_max: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.beta_min <= self.beta_max):
            raise DomainError(
                f"require 0 < beta_min <= beta_max, got ({self.beta_min}, {self.beta_max})"
            )
        if not (0.0 < self.t_min < self.t_max <= 1.0):
            raise DomainError(
                f"require 0 < t_min < t_max <= 1, got ({self.t_min}, {self.t_max})"
            )

    def beta(self, t):
        """Instantaneous noise rate ``beta(t)``."""
        t = np.asarray(t, dtype=np.float64)
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def integrated_beta(self, t):
        """Closed form of ``int_0^t beta(s) ds`` for the linear rate."""
        t = np.asarray(t, dtype=np.float64)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def diffusion(self, t):
        """Diffusion coefficient ``g(t) = sqrt(beta(t))``."""
        return np.sqrt(self.beta(t))

    def drift(self, x, t):
        """Forward drift ``f(x, t) = -0.5 * beta(t) * x``."""
        return -0.5 * self.beta(t) * np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class KarrasSchedule:
    """Power-law noise-level grid for the sigma-parameterized denoiser."""

    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    n_steps: int = 100
    sigma_data: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.sigma_min < self.sigma_max):
            raise DomainError(
                f"require 0 < sigma_min < sigma_max, got ({self.sigma_min}, {self.sigma_max})"
            )
        if self.rho <= 0.0:
            raise DomainError(f"rho must be positive, got {self.rho}")
        if self.n_steps < 2:
            raise DomainError(f"n_steps must be >= 2, got {self.n_steps}")
        if self.sigma_data <= 0.0:
            raise DomainError(f"sigma_data must be positive, got {self.sigma_data}")


@dataclass(frozen=True)
class KernelMoments:
    """Gaussian moments of the VP transition kernel at one time point."""

    mean_factor: float
    std: float


def vp_kernel_moments(schedule: VpSchedule, t: float) -> KernelMoments:
    """Exact moments of the VP perturbation kernel at time ``t``.

    Returns ``(mean_factor, std)`` such that ``x_t = mean_factor * x0 +
    std * eps`` with ``eps`` standard normal.  The linear rate integrates
    in closed form, so no quadrature is involved.
    """
    t = float(t)
    if t < 0.0 or t > schedule.t_max:
        raise DomainError(f"t={t} outside [0, {schedule.t_max}]")
    ib = float(schedule.integrated_beta(t))
    mean_factor = np.exp(-0.5 * ib)
    std = np.sqrt(max(0.0, 1.0 - np.exp(-ib)))
    return KernelMoments(float(mean_factor), float(std))


def vp_perturb(x0, t, schedule: VpSchedule, rng: np.random.Generator):
    """Draw ``x_t`` from the VP forward kernel; returns ``(x_t, eps)``.

    ``eps`` is the standard-normal draw used, kept around as the target
    of the noise-prediction loss.
    """
    t = float(t)
    if not (0.0 < t <= schedule.t_max):
        raise DomainError(f"t={t} outside (0, {schedule.t_max}]")
    x0 = np.asarray(x0)
    mom = vp_kernel_moments(schedule, t)
    eps = rng.standard_normal(size=x0.shape)
    x_t = mom.mean_factor * x0 + mom.std * eps
    return x_t, eps


def vp_true_score(x_t, x0, t, schedule: VpSchedule):
    """Exact conditional score of the VP kernel, ``-(x_t - m*x0)/std^2``.

    Equals ``-eps/std`` for the ``eps`` that generated ``x_t``.  Note the
    mean scaling on ``x0``: without it the ``-eps/std`` identity fails.
    """
    mom = vp_kernel_moments(schedule, t)
    if mom.std == 0.0:
        raise SingularityError(f"score is singular at t={t} (std=0)")
    x_t = np.asarray(x_t, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    return -(x_t - mom.mean_factor * x0) / (mom.std**2)


def karras_sigma_steps(schedule: KarrasSchedule) -> np.ndarray:
    """Decreasing sigma sequence from ``sigma_max`` down to ``sigma_min``.

    Uses the power-law discretization

        sigma_i = (smax^(1/rho) + i/(N-1) * (smin^(1/rho) - smax^(1/rho)))^rho

    for ``i = 0 .. N-1`` and appends a terminal 0 as the final boundary.
    """
    n = schedule.n_steps
    i = np.arange(n, dtype=np.float64)
    inv_rho = 1.0 / schedule.rho
    hi = schedule.sigma_max**inv_rho
    lo = schedule.sigma_min**inv_rho
    sigmas = (hi + i / (n - 1) * (lo - hi)) ** schedule.rho
    return np.concatenate([sigmas, [0.0]])
