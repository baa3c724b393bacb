"""Plain mini-batch SGD shared by every model in the package."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np


class TrainingDiverged(FloatingPointError):
    """Raised when a mini-batch produces a non-finite gradient or parameter."""

    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite values at epoch {epoch}, batch {batch}{detail}")


def decayed_lr(base_lr: float, epoch: int) -> float:
    """Learning rate for 1-based ``epoch``: ``base_lr * 10 / (10 + sqrt(epoch - 1))``."""
    return base_lr * 10.0 / (10.0 + math.sqrt(epoch - 1))


def sgd(
    grad_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    theta: np.ndarray,
    n: int,
    *,
    learning_rate: float,
    batch_size: int,
    epochs: int,
    lr_decay: bool,
    rng: np.random.Generator,
    ascent: bool = False,
) -> np.ndarray:
    """Run ``epochs`` shuffled passes over ``n`` samples.

    ``grad_fn(idx, theta)`` returns the mini-batch gradient for the sample
    indices ``idx``. With ``ascent=True`` the update is ``theta + lr * g``,
    otherwise ``theta - lr * g``.
    """
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    theta = np.array(theta, dtype=float)
    sign = 1.0 if ascent else -1.0
    for epoch in range(1, epochs + 1):
        lr = decayed_lr(learning_rate, epoch) if lr_decay else learning_rate
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, batch_size)):
            g = grad_fn(order[start : start + batch_size], theta)
            theta += sign * lr * g
            if not np.all(np.isfinite(theta)):
                raise TrainingDiverged(epoch, b)
    return theta
