from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import Tensor


class NumericalError(FloatingPointError):
    """Training produced a non-finite value; carries a diagnostic message."""


class Adam:
    """Adam with bias correction.

    Defaults follow the training recipe used throughout this package
    (beta1=0.0, beta2=0.5); all of them stay configurable.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-4,
        beta1: float = 0.0,
        beta2: float = 0.5,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, grads: Sequence[np.ndarray | None] | None = None) -> None:
        """Apply one update using ``grads`` (defaults to each parameter's ``.grad``)."""
        if grads is None:
            grads = [p.grad for p in self.params]
        for i, g in enumerate(grads):
            if g is not None and not np.all(np.isfinite(g)):
                bad = int(np.count_nonzero(~np.isfinite(g)))
                raise NumericalError(
                    f"non-finite gradient at step {self.step_count + 1}: parameter {i} "
                    f"shape {self.params[i].shape} has {bad} non-finite entries"
                )
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    """Cosine annealing from ``lr0`` at epoch 0 down to zero at ``total_epochs``."""
    if lr0 <= 0:
        raise ValueError(f"lr0 must be positive, got {lr0}")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    if total_epochs == 0:
        return lr0
    return lr0 * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0
