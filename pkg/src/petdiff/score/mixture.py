"""Analytic Gaussian-mixture score oracle.

A diagonal-covariance mixture convolved with isotropic Gaussian noise is
again a mixture in closed form, which gives exact smoothed densities,
scores and posterior means.  Used as the ground-truth model when
verifying the samplers.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ..sde import VpSchedule, vp_kernel_moments
from .denoiser import Denoiser


class GaussianMixture:
    """Mixture of axis-aligned Gaussians.

    weights: (K,) probabilities summing to 1
    means: (K, d)
    variances: (K, d) strictly positive per-axis variances
    """

    def __init__(self, weights, means, variances):
        w = np.atleast_1d(np.asarray(weights, dtype=np.float64))
        mu = np.atleast_2d(np.asarray(means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(variances, dtype=np.float64))
        if mu.shape != var.shape or mu.shape[0] != w.shape[0]:
            raise ValueError(
                f"inconsistent component shapes: w{w.shape} mu{mu.shape} var{var.shape}"
            )
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        if np.any(var <= 0.0):
            raise ValueError("variances must be strictly positive")
        self.weights = w
        self.means = mu
        self.variances = var

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def moments(self):
        """Exact mean (d,) and covariance (d, d) of the mixture."""
        mean = self.weights @ self.means
        cov = np.zeros((self.dim, self.dim))
        for w, mu, var in zip(self.weights, self.means, self.variances):
            delta = mu - mean
            cov += w * (np.diag(var) + np.outer(delta, delta))
        return mean, cov


def _as_points(x, dim):
    """View x as (n, dim) points; 1-D mixtures accept any array shape."""
    x = np.asarray(x, dtype=np.float64)
    if dim == 1:
        return x.reshape(-1, 1), x.shape
    if x.shape[-1] != dim:
        raise ValueError(f"last axis of x must have size {dim}, got shape {x.shape}")
    return x.reshape(-1, dim), x.shape


def _smoothed_log_weights(pts, sigma, gmm):
    """Per-component log responsibilities log(w_k N(x; mu_k, var_k + sigma^2))."""
    var = gmm.variances[None, :, :] + float(sigma) ** 2  # (1, K, d)
    diff = pts[:, None, :] - gmm.means[None, :, :]  # (n, K, d)
    log_comp = -0.5 * np.sum(diff**2 / var + np.log(2.0 * np.pi * var), axis=2)
    return np.log(gmm.weights)[None, :] + log_comp, diff, var


def gmm_log_density(x, sigma, gmm: GaussianMixture):
    """log p_sigma(x) of the mixture convolved with N(0, sigma^2 I)."""
    pts, shape = _as_points(x, gmm.dim)
    log_w, _, _ = _smoothed_log_weights(pts, sigma, gmm)
    out = logsumexp(log_w, axis=1)
    return out.reshape(shape[:-1]) if gmm.dim > 1 else out.reshape(shape)


def gmm_score(x, sigma, gmm: GaussianMixture):
    """Exact score of the sigma-smoothed mixture, grad_x log p_sigma(x).

    ``sigma = 0`` gives the score of the mixture itself.  Shape of the
    result matches ``x``.
    """
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    pts, shape = _as_points(x, gmm.dim)
    log_w, diff, var = _smoothed_log_weights(pts, sigma, gmm)
    resp = np.exp(log_w - logsumexp(log_w, axis=1, keepdims=True))  # (n, K)
    per_comp = -diff / var  # (n, K, d)
    score = np.sum(resp[:, :, None] * per_comp, axis=1)
    return score.reshape(shape)


class GmmDenoiser(Denoiser):
    """Exact denoiser / VP score model for a Gaussian-mixture target.

    The ``denoise`` form is the posterior mean recovered from the
    smoothed score, ``D(x, sigma) = x + sigma^2 * grad log p_sigma(x)``.
    The VP ``score`` form scales the mixture by the kernel moments at
    time ``t`` (means by the mean factor, variances by its square) and
    smooths with the kernel std.  Conditioning is ignored.
    """

    def __init__(self, gmm: GaussianMixture, schedule: VpSchedule | None = None):
        self.gmm = gmm
        self.schedule = schedule

    def denoise(self, x, sigma, cond=None):
        x = np.asarray(x, dtype=np.float64)
        if sigma == 0.0:
            return x.copy()
        return x + float(sigma) ** 2 * gmm_score(x, sigma, self.gmm)

    def score(self, x, t, cond=None):
        if self.schedule is None:
            raise ValueError("VP score requires a VpSchedule")
        mom = vp_kernel_moments(self.schedule, t)
        scaled = GaussianMixture(
            self.gmm.weights,
            mom.mean_factor * self.gmm.means,
            mom.mean_factor**2 * self.gmm.variances,
        )
        return gmm_score(x, mom.std, scaled)
