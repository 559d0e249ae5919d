"""
SGD with momentum and weight decay, plus the warmup / plateau-decay learning-rate schedule.
"""

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .models import ScheduleConfig

logger = logging.getLogger(__name__)


class NonFiniteGradientError(ArithmeticError):
    """A gradient contained NaN or inf; the step was not applied."""

    def __init__(self, names: list[str]):
        super().__init__(f"non-finite gradient in: {', '.join(names)}")
        self.names = names


class LRSchedule:
    """
    Linear warmup from ``warmup_start`` to ``peak_lr``, then a plateau schedule that
    multiplies the rate by ``decay_factor`` whenever the observed metric has not improved
    for ``patience`` observations, never going below ``min_lr``.
    """

    def __init__(self, cfg: ScheduleConfig):
        self.cfg = cfg
        self._plateau_lr = cfg.peak_lr
        self._best = math.inf
        self._since_best = 0
        self.decays = 0

    def lr(self, step: int) -> float:
        cfg = self.cfg
        if step < cfg.warmup_steps:
            return cfg.warmup_start + (cfg.peak_lr - cfg.warmup_start) * step / cfg.warmup_steps
        return self._plateau_lr

    def observe(self, step: int, metric: float) -> None:
        """Feed the monitored (smoothed) loss; only observations after warmup count."""
        if step < self.cfg.warmup_steps or not math.isfinite(metric):
            return
        if metric < self._best:
            self._best = metric
            self._since_best = 0
            return
        self._since_best += 1
        if self._since_best >= self.cfg.patience and self._plateau_lr > self.cfg.min_lr:
            self._plateau_lr = max(self._plateau_lr * self.cfg.decay_factor, self.cfg.min_lr)
            self._since_best = 0
            self.decays += 1
            logger.info("Step %d: loss plateaued, learning rate -> %.2e", step, self._plateau_lr)


@dataclass
class OptimizerState:
    schedule: LRSchedule
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    skipped: int = 0

    @classmethod
    def from_config(cls, cfg: ScheduleConfig) -> "OptimizerState":
        return cls(schedule=LRSchedule(cfg), momentum=cfg.momentum, weight_decay=cfg.weight_decay)

    @property
    def lr(self) -> float:
        return self.schedule.lr(self.step)


def sgd_step(
    state: OptimizerState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr: float | None = None,
) -> dict[str, np.ndarray]:
    """
    One momentum step: v <- mu * v + (g + wd * w); w <- w - lr * v.

    Parameters without a gradient are returned unchanged. Raises NonFiniteGradientError
    (leaving ``state`` untouched) if any gradient is NaN or inf.
    """
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(bad)
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter '{name}'")
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter '{name}' {np.shape(params[name])}")

    rate = state.lr if lr is None else lr
    updated = {}
    for name, w in params.items():
        if name not in grads:
            updated[name] = w
            continue
        v = state.velocity.get(name, np.zeros_like(w))
        v = state.momentum * v + (grads[name] + state.weight_decay * w)
        state.velocity[name] = v
        updated[name] = w - rate * v
    state.step += 1
    return updated
