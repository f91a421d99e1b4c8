"""Context corruption through the forward diffusion process."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ddpm import NoiseSchedule, forward_sample


@dataclass(frozen=True)
class DropoutScheduler:
    """Piecewise-constant rate: ``rates[0]`` during warm-up, then one step up per interval."""

    rates: tuple[float, ...] = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25)
    warmup_epochs: int = 500
    interval_epochs: int = 100

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if not self.rates:
            raise ValueError("dropout scheduler needs at least one rate")
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            raise ValueError("dropout rates must lie in [0, 1]")
        if any(b < a for a, b in zip(self.rates, self.rates[1:])):
            raise ValueError("dropout rates must be nondecreasing")
        if self.warmup_epochs < 0 or self.interval_epochs < 1:
            raise ValueError("warmup_epochs must be >= 0 and interval_epochs >= 1")

    def rate_at(self, epoch: int) -> float:
        return dropout_rate_at(epoch, self)


def dropout_rate_at(epoch: int, scheduler: DropoutScheduler) -> float:
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    n = len(scheduler.rates)
    if epoch < scheduler.warmup_epochs:
        idx = 0
    else:
        idx = min(1 + (epoch - scheduler.warmup_epochs) // scheduler.interval_epochs, n - 1)
    return scheduler.rates[idx]


def diffusion_dropout(x, s, eps, sched: NoiseSchedule, p, p_d: float) -> np.ndarray:
    """Replace ``x`` by its step-``s`` forward diffusion wherever ``p < p_d``.

    Batched use passes ``s`` and ``p`` as 1-D arrays over the leading axis.
    """
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x.shape != eps.shape:
        raise ValueError(f"shape mismatch x/eps: {x.shape} vs {eps.shape}")
    if not 0.0 <= p_d <= 1.0:
        raise ValueError("p_d must lie in [0, 1]")
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(p >= 1):
        raise ValueError("p must lie in [0, 1)")
    drop = p < p_d
    if p.ndim == 0:
        return forward_sample(x, s, eps, sched) if drop else x
    if not drop.any():
        return x
    noised = forward_sample(x, s, eps, sched)
    return np.where(drop.reshape((-1,) + (1,) * (x.ndim - 1)), noised, x)
