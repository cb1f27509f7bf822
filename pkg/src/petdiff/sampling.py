"""Reverse-process samplers and slice-conditioned volume assembly.

Two samplers are provided.  ``pc_sample`` integrates the reverse SDE of
the VP scheme with Euler-Maruyama predictor steps, each followed by a
fixed number of score-normalized Langevin corrector steps.  The
corrector step size is

    eps = 2 * r^2 * (||z||_2 / ||g||_2)^2

with signal-to-noise ratio r, noise draw z and score g.  ``karras_sample``
runs the stochastic second-order scheme in the sigma parameterization:
optional noise churn raises the current level t to t_hat = t*(1 + gamma),
then an Euler step using d = (x - D(x, t, y))/t is corrected by averaging
with the slope at the next level (skipped at the terminal level 0).

Outputs are clamped to a configured range only after the final step;
intermediate states are never clamped.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SamplerDivergenceError
from .sde import KarrasSchedule, VpSchedule, karras_sigma_steps
from .volume_io import Volume


@dataclass(frozen=True)
class PcSamplerConfig:
    """Predictor-corrector settings: N predictor steps, M corrector steps each."""

    n_predictor_steps: int = 250
    n_corrector_steps: int = 1
    snr: float = 0.16
    schedule: VpSchedule = field(default_factory=VpSchedule)
    seed: int = 0
    clip_range: tuple | None = None

    def __post_init__(self):
        if self.n_predictor_steps < 1:
            raise DomainError(f"need at least 1 predictor step, got {self.n_predictor_steps}")
        if self.n_corrector_steps < 0:
            raise DomainError(f"corrector steps must be >= 0, got {self.n_corrector_steps}")
        if self.snr <= 0.0:
            raise DomainError(f"snr must be positive, got {self.snr}")


@dataclass(frozen=True)
class KarrasSamplerConfig:
    """Stochastic Heun settings; s_churn = 0 gives the deterministic flow."""

    schedule: KarrasSchedule = field(default_factory=KarrasSchedule)
    s_churn: float = 0.0
    s_tmin: float = 0.0
    s_tmax: float = float("inf")
    s_noise: float = 1.0
    seed: int = 0
    clip_range: tuple | None = None

    def __post_init__(self):
        if self.s_churn < 0.0:
            raise DomainError(f"s_churn must be >= 0, got {self.s_churn}")
        if self.s_noise <= 0.0:
            raise DomainError(f"s_noise must be positive, got {self.s_noise}")
        if not (0.0 <= self.s_tmin <= self.s_tmax):
            raise DomainError(f"need 0 <= s_tmin <= s_tmax, got ({self.s_tmin}, {self.s_tmax})")


@dataclass(frozen=True)
class VolumeAssemblyPlan:
    """Slice-wise assembly: axial axis, odd condition window, edge policy."""

    axis: int = 2
    window: int = 3
    edge: str = "replicate"

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise ValueError(f"axis must be 0, 1 or 2, got {self.axis}")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be a positive odd count, got {self.window}")
        if self.edge != "replicate":
            raise ValueError(f"unknown edge policy {self.edge!r}")


def corrector_step(x, g, snr: float, rng: np.random.Generator):
    """One Langevin correction of ``x`` along the score ``g``.

    The step size normalizes the score magnitude against a fresh noise
    draw: eps = 2*snr^2*(||z||/||g||)^2, then x <- x + eps*g + sqrt(2 eps)*z.
    A zero-norm score leaves the step size undefined; the step is skipped
    with a warning.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    z = rng.standard_normal(size=x.shape)
    g_norm = float(np.sqrt(np.sum(g * g)))
    if g_norm == 0.0:
        warnings.warn("corrector step skipped: zero-norm score", stacklevel=2)
        return x
    z_norm = float(np.sqrt(np.sum(z * z)))
    eps = 2.0 * snr**2 * (z_norm / g_norm) ** 2
    return x + eps * g + np.sqrt(2.0 * eps) * z


def pc_sample(model, cond, shape, config: PcSamplerConfig, *, rng=None, x_init=None, callback=None):
    """Draw one sample by predictor-corrector reverse integration.

    Starts from standard normal noise at t_max and integrates the
    reverse SDE to t_min on a uniform time grid with N Euler-Maruyama
    predictor steps; after each, M corrector steps refine the state at
    the new time.  Deterministic given the seed (or a supplied ``rng``).

    Parameters
    ----------
    model : object with ``score(x, t, cond)``
    cond : ConditionStack or None
    shape : output array shape
    config : PcSamplerConfig
    rng : optional generator overriding ``config.seed``
    x_init : optional initial state at t_max (drawn from N(0, I) if absent)
    callback : optional ``callback(step_index, t)`` progress hook
    """
    sched = config.schedule
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = config.n_predictor_steps
    grid = np.linspace(sched.t_min, sched.t_max, n + 1)

    if x_init is not None:
        x = np.array(x_init, dtype=np.float64)
        if shape is not None and x.shape != tuple(np.atleast_1d(shape)):
            raise ValueError(f"x_init shape {x.shape} != requested shape {shape}")
    else:
        x = rng.standard_normal(size=shape)

    for k, i in enumerate(range(n, 0, -1), start=1):
        t_cur = float(grid[i])
        t_next = float(grid[i - 1])
        dt = t_next - t_cur  # negative: integrating backward in time
        score = model.score(x, t_cur, cond)
        g = float(sched.diffusion(t_cur))
        drift = sched.drift(x, t_cur) - g**2 * score
        z = rng.standard_normal(size=x.shape)
        x = x + drift * dt + g * np.sqrt(-dt) * z
        for _ in range(config.n_corrector_steps):
            x = corrector_step(x, model.score(x, t_next, cond), config.snr, rng)
        if not np.all(np.isfinite(x)):
            raise SamplerDivergenceError(k, f"t={t_next:.6g}")
        if callback is not None:
            callback(k, t_next)

    if config.clip_range is not None:
        x = np.clip(x, config.clip_range[0], config.clip_range[1])
    return x


def karras_sample(model, cond, shape, config: KarrasSamplerConfig, *, rng=None, x_init=None, callback=None):
    """Draw one sample with the stochastic second-order sigma-space scheme.

    With ``s_churn = 0`` and a fixed ``x_init`` the trajectory is fully
    deterministic (no random draws at all).  The second-order slope
    average is skipped on the terminal step where the next level is 0.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    sigmas = karras_sigma_steps(config.schedule)
    n = config.schedule.n_steps

    if x_init is not None:
        x = np.array(x_init, dtype=np.float64)
        if shape is not None and x.shape != tuple(np.atleast_1d(shape)):
            raise ValueError(f"x_init shape {x.shape} != requested shape {shape}")
    else:
        x = float(sigmas[0]) * rng.standard_normal(size=shape)

    gamma_cap = np.sqrt(2.0) - 1.0
    for i in range(n):
        t_cur = float(sigmas[i])
        t_next = float(sigmas[i + 1])
        gamma = 0.0
        if config.s_churn > 0.0 and config.s_tmin <= t_cur <= config.s_tmax:
            gamma = min(config.s_churn / n, gamma_cap)
        t_hat = t_cur * (1.0 + gamma)
        if gamma > 0.0:
            eps = config.s_noise * rng.standard_normal(size=x.shape)
            x = x + np.sqrt(t_hat**2 - t_cur**2) * eps
        d = (x - model.denoise(x, t_hat, cond)) / t_hat
        x_next = x + (t_next - t_hat) * d
        if t_next != 0.0:
            d_next = (x_next - model.denoise(x_next, t_next, cond)) / t_next
            x_next = x + (t_next - t_hat) * 0.5 * (d + d_next)
        x = x_next
        if not np.all(np.isfinite(x)):
            raise SamplerDivergenceError(i + 1, f"sigma={t_next:.6g}")
        if callback is not None:
            callback(i + 1, t_next)

    if config.clip_range is not None:
        x = np.clip(x, config.clip_range[0], config.clip_range[1])
    return x


def assemble_volume(sample_slice, conditions, plan: VolumeAssemblyPlan, seed: int, *,
                    n_threads: int = 1, spacing=(1.0, 1.0, 1.0), units: str = "normalized") -> Volume:
    """Build a 3-D volume by sampling each slice independently.

    ``sample_slice(cond, rng)`` produces one 2-D slice given its
    ConditionStack and a dedicated random source.  Slice k's source is
    seeded from ``(seed, k)``, so results do not depend on execution
    order or thread count.

    Parameters
    ----------
    sample_slice : callable (ConditionStack, Generator) -> 2-D array
    conditions : sequence of ConditionStack, one per slice
    plan : VolumeAssemblyPlan giving the stacking axis
    seed : global seed that per-slice seeds derive from
    n_threads : sample slices concurrently when > 1
    """
    conditions = list(conditions)
    if not conditions:
        raise ValueError("no condition stacks supplied")
    slice_shape = conditions[0].spatial_shape
    for k, stack in enumerate(conditions):
        if stack.spatial_shape != slice_shape:
            raise ValueError(
                f"condition stack {k} spatial shape {stack.spatial_shape} != {slice_shape}"
            )

    def run(k: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), k]))
        out = np.asarray(sample_slice(conditions[k], rng), dtype=np.float32)
        if out.shape != slice_shape:
            raise ValueError(f"slice {k}: sampler returned shape {out.shape}, want {slice_shape}")
        return out

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            slices = list(pool.map(run, range(len(conditions))))
    else:
        slices = [run(k) for k in range(len(conditions))]

    return Volume(np.stack(slices, axis=plan.axis), spacing=spacing, units=units)
