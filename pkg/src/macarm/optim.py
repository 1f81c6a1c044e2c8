"""First-order optimizers updating dicts of numpy arrays in place."""

from __future__ import annotations

import math

import numpy as np

from .exceptions import InvalidArgumentError


class SGD:
    def __init__(self, lr: float = 1e-2):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float | None = None):
        lr = self.lr if lr is None else lr
        for k, g in grads.items():
            params[k] -= lr * g


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self._m.setdefault(k, np.zeros_like(g))
            v = self._v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return SGD(lr)
    raise InvalidArgumentError(f"unknown optimizer {name!r}")


def scheduled_lr(base: float, step: int, total: int, schedule: str = "constant", warmup: int = 0) -> float:
    """Learning rate at ``step`` (0-based) of ``total``.

    Schedules: ``constant``, ``cosine``, ``linear`` (both to zero) and
    ``inverse`` (Robbins-Monro ``base / t``).
    """
    if warmup and step < warmup:
        return base * (step + 1) / warmup
    if schedule == "constant":
        return base
    if schedule == "cosine":
        frac = (step - warmup) / max(1, total - warmup)
        return base * 0.5 * (1 + math.cos(math.pi * min(frac, 1.0)))
    if schedule == "linear":
        frac = (step - warmup) / max(1, total - warmup)
        return base * max(0.0, 1 - frac)
    if schedule == "inverse":
        return base / (1 + step - warmup)
    raise InvalidArgumentError(f"unknown lr schedule {schedule!r}")
