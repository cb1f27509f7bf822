"""Training loop for the small denoiser: SGD with momentum and grad clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingDivergedError
from ..sde import KarrasSchedule
from .denoiser import KarrasNetDenoiser, VpNetDenoiser
from .losses import edm_loss_and_grads, sample_edm_draws, sample_vp_draws, vp_dsm_loss_and_grads


@dataclass
class SliceDataset:
    """Paired training slices: targets (S,H,W) and conditions (S,C,H,W) or None."""

    targets: np.ndarray
    conds: np.ndarray | None = None

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.ndim != 3 or self.targets.shape[0] == 0:
            raise ValueError(f"targets must be a nonempty (S,H,W) array, got {self.targets.shape}")
        if self.conds is not None:
            self.conds = np.asarray(self.conds, dtype=np.float64)
            if self.conds.shape[0] != self.targets.shape[0] or self.conds.shape[2:] != self.targets.shape[1:]:
                raise ValueError(
                    f"conditions {self.conds.shape} inconsistent with targets {self.targets.shape}"
                )

    def __len__(self) -> int:
        return self.targets.shape[0]

    def subset(self, idx):
        return SliceDataset(self.targets[idx], None if self.conds is None else self.conds[idx])


@dataclass
class TrainingConfig:
    n_steps: int = 500
    batch_size: int = 16
    learning_rate: float = 1e-3
    momentum: float = 0.9
    clip_norm: float = 1.0
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 0 or self.batch_size < 1:
            raise ValueError("n_steps must be >= 0 and batch_size >= 1")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ValueError("val_fraction must be in [0, 1)")


@dataclass
class TrainingResult:
    loss_trace: list = field(default_factory=list)  # [(step, loss), ...]
    val_loss_initial: float = float("nan")
    val_loss_final: float = float("nan")


def _loss_and_grads(model, targets, conds, draws):
    if isinstance(model, VpNetDenoiser):
        return vp_dsm_loss_and_grads(model.net, targets, conds, draws, model.schedule)
    if isinstance(model, KarrasNetDenoiser):
        sched = KarrasSchedule(sigma_data=model.sigma_data)
        return edm_loss_and_grads(model.net, targets, conds, draws, sched)
    raise TypeError(f"unsupported trainable model {type(model).__name__}")


def _sample_draws(model, rng, n, shape):
    if isinstance(model, VpNetDenoiser):
        return sample_vp_draws(rng, n, shape, model.schedule)
    return sample_edm_draws(rng, n, shape)


def _eval_loss(model, dataset: SliceDataset, seed: int) -> float:
    """Validation loss with frozen draws so successive evaluations compare."""
    rng = np.random.default_rng(seed)
    draws = _sample_draws(model, rng, len(dataset), dataset.targets.shape[1:])
    loss, _ = _loss_and_grads(model, dataset.targets, dataset.conds, draws)
    return loss


def train_denoiser(model, dataset: SliceDataset, config: TrainingConfig, rng=None) -> TrainingResult:
    """Train in place; returns the per-step loss trace and val losses.

    Gradients are clipped to ``clip_norm`` in global 2-norm before the
    momentum update.  A non-finite loss aborts with the failing step.
    """
    rng = np.random.default_rng(config.seed if rng is None else rng)
    net = model.net

    n_val = int(round(config.val_fraction * len(dataset)))
    perm = np.random.default_rng(config.seed).permutation(len(dataset))
    val_set = dataset.subset(perm[:n_val]) if n_val else dataset
    train_set = dataset.subset(perm[n_val:]) if n_val else dataset
    if len(train_set) == 0:
        raise ValueError("no training slices left after validation split")

    result = TrainingResult()
    result.val_loss_initial = _eval_loss(model, val_set, config.seed + 1)

    velocity = {name: np.zeros_like(p) for name, p in net.params.items()}
    shape = train_set.targets.shape[1:]
    for step in range(config.n_steps):
        idx = rng.integers(0, len(train_set), size=config.batch_size)
        targets = train_set.targets[idx]
        conds = None if train_set.conds is None else train_set.conds[idx]
        draws = _sample_draws(model, rng, config.batch_size, shape)
        loss, grads = _loss_and_grads(model, targets, conds, draws)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step)
        result.loss_trace.append((step, loss))

        gnorm = np.sqrt(sum(float(np.sum(g**2)) for g in grads.values()))
        if gnorm > config.clip_norm and gnorm > 0.0:
            scale = config.clip_norm / gnorm
            grads = {n: g * scale for n, g in grads.items()}
        for name in net.params:
            velocity[name] = config.momentum * velocity[name] + grads[name]
            net.params[name] = net.params[name] - config.learning_rate * velocity[name]

    result.val_loss_final = _eval_loss(model, val_set, config.seed + 1)
    return result
