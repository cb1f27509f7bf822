"""Denoising losses for the VP and sigma-parameterized training schemes.

Each loss comes in two forms: a generic evaluation against any model
implementing the ``Denoiser`` interface, and a ``*_and_grads`` form for
the hand-written network that also returns parameter gradients.  Both
accept pre-drawn noise/time samples so values are comparable across the
two paths and finite-difference checks see a deterministic function.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..sde import KarrasSchedule, VpSchedule, vp_kernel_moments
from .denoiser import precondition_coeffs


class VpDraws(NamedTuple):
    ts: np.ndarray  # (B,)
    eps: np.ndarray  # (B, ...) standard normal


class EdmDraws(NamedTuple):
    sigmas: np.ndarray  # (B,)
    unit_noise: np.ndarray  # (B, ...) standard normal, scaled by sigma when used


def sample_vp_draws(rng, n: int, shape, schedule: VpSchedule) -> VpDraws:
    """Uniform times on [t_min, t_max] and unit noise for a batch."""
    ts = rng.uniform(schedule.t_min, schedule.t_max, size=n)
    eps = rng.standard_normal(size=(n, *shape))
    return VpDraws(ts, eps)


def sample_edm_draws(rng, n: int, shape, p_mean: float = -1.2, p_std: float = 1.2) -> EdmDraws:
    """Log-normal noise levels, ln(sigma) ~ N(p_mean, p_std^2), and unit noise."""
    sigmas = np.exp(rng.normal(p_mean, p_std, size=n))
    unit = rng.standard_normal(size=(n, *shape))
    return EdmDraws(sigmas, unit)


def _as_batch(targets, conds):
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    if conds is not None:
        conds = np.asarray(conds, dtype=np.float64)
        if conds.shape[0] != targets.shape[0]:
            raise ValueError("conditions and targets disagree on batch size")
    return targets, conds


def vp_dsm_loss(model, targets, conds, schedule: VpSchedule, rng=None, *, weight_fn=None,
                draws: VpDraws | None = None) -> float:
    """Score-matching loss E_t lambda_t || s(x_t, t, y) + eps/std_t ||^2.

    The norm is squared and summed over slice elements, then averaged
    over the batch.  Default weight ``lambda_t = std_t^2`` turns the
    score residual into a noise-prediction residual.
    """
    targets, conds = _as_batch(targets, conds)
    if draws is None:
        if rng is None:
            raise ValueError("either rng or draws must be given")
        draws = sample_vp_draws(rng, targets.shape[0], targets.shape[1:], schedule)
    total = 0.0
    for i, (t, eps) in enumerate(zip(draws.ts, draws.eps)):
        mom = vp_kernel_moments(schedule, t)
        x_t = mom.mean_factor * targets[i] + mom.std * eps
        cond = None if conds is None else conds[i]
        s_model = model.score(x_t, t, cond)
        lam = weight_fn(t) if weight_fn is not None else mom.std**2
        total += lam * float(np.sum((s_model + eps / mom.std) ** 2))
    return total / targets.shape[0]


def edm_loss(model, targets, conds, schedule: KarrasSchedule, rng=None, *, weight_fn=None,
             draws: EdmDraws | None = None) -> float:
    """Denoising loss E_sigma lambda(sigma) || D(x + n; sigma, y) - x ||^2.

    Default weight lambda(sigma) = (sigma^2 + sd^2) / (sigma * sd)^2,
    the reciprocal of c_out^2, which equalizes the effective residual
    scale across noise levels.
    """
    targets, conds = _as_batch(targets, conds)
    if draws is None:
        if rng is None:
            raise ValueError("either rng or draws must be given")
        draws = sample_edm_draws(rng, targets.shape[0], targets.shape[1:])
    sd = schedule.sigma_data
    total = 0.0
    for i, (sigma, unit) in enumerate(zip(draws.sigmas, draws.unit_noise)):
        x_noisy = targets[i] + sigma * unit
        cond = None if conds is None else conds[i]
        denoised = model.denoise(x_noisy, sigma, cond)
        lam = weight_fn(sigma) if weight_fn is not None else (sigma**2 + sd**2) / (sigma * sd) ** 2
        total += lam * float(np.sum((denoised - targets[i]) ** 2))
    return total / targets.shape[0]


def vp_dsm_loss_and_grads(net, targets, conds, draws: VpDraws, schedule: VpSchedule, *,
                          weight_fn=None):
    """Batched VP loss plus parameter gradients for the hand-written net.

    The net predicts the forward noise; the score residual is rewritten
    as ``lambda_t / std_t^2 * ||eps_hat - eps||^2``, which is identical
    to the generic form for any weight.
    """
    targets, conds = _as_batch(targets, conds)
    n = targets.shape[0]
    ts = np.asarray(draws.ts, dtype=np.float64)
    eps = np.asarray(draws.eps, dtype=np.float64)
    moms = [vp_kernel_moments(schedule, t) for t in ts]
    m = np.array([mo.mean_factor for mo in moms])
    s = np.array([mo.std for mo in moms])
    bshape = (n,) + (1,) * (targets.ndim - 1)
    x_t = m.reshape(bshape) * targets + s.reshape(bshape) * eps
    eps_hat, cache = net.forward_batch(x_t, ts, conds)
    lam = np.array([weight_fn(t) for t in ts]) if weight_fn is not None else s**2
    resid = eps_hat - eps
    scale = lam / s**2
    loss = float(np.sum(scale.reshape(bshape) * resid**2) / n)
    dout = (2.0 / n) * scale.reshape(bshape) * resid
    grads = net.backward_batch(dout, cache)
    return loss, grads


def edm_loss_and_grads(net, targets, conds, draws: EdmDraws, schedule: KarrasSchedule, *,
                       weight_fn=None):
    """Batched sigma-parameterized loss plus parameter gradients."""
    targets, conds = _as_batch(targets, conds)
    n = targets.shape[0]
    sigmas = np.asarray(draws.sigmas, dtype=np.float64)
    unit = np.asarray(draws.unit_noise, dtype=np.float64)
    sd = schedule.sigma_data
    coeffs = [precondition_coeffs(sig, sd) for sig in sigmas]
    c_skip = np.array([c.c_skip for c in coeffs])
    c_out = np.array([c.c_out for c in coeffs])
    c_in = np.array([c.c_in for c in coeffs])
    c_noise = np.array([c.c_noise for c in coeffs])
    bshape = (n,) + (1,) * (targets.ndim - 1)
    x_noisy = targets + sigmas.reshape(bshape) * unit
    f_out, cache = net.forward_batch(c_in.reshape(bshape) * x_noisy, c_noise, conds)
    denoised = c_skip.reshape(bshape) * x_noisy + c_out.reshape(bshape) * f_out
    lam = (
        np.array([weight_fn(sig) for sig in sigmas])
        if weight_fn is not None
        else (sigmas**2 + sd**2) / (sigmas * sd) ** 2
    )
    resid = denoised - targets
    loss = float(np.sum(lam.reshape(bshape) * resid**2) / n)
    d_denoised = (2.0 / n) * lam.reshape(bshape) * resid
    grads = net.backward_batch(c_out.reshape(bshape) * d_denoised, cache)
    return loss, grads
