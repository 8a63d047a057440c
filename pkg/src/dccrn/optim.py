"""Adam plus the plateau rules used by training: halve the learning rate when
validation loss rises, stop once it has not improved for ``patience`` epochs."""

from __future__ import annotations

import math

import numpy as np


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        scale = self.lr * math.sqrt(c2) / c1
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= (scale * m / (np.sqrt(v) + self.eps * math.sqrt(c2))).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None))
    if total > max_norm > 0:
        k = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * k
    return total


class PlateauSchedule:
    """Per-epoch bookkeeping for lr halving and early stopping.

    ``update(val_loss)`` halves ``optimizer.lr`` whenever the loss is higher
    than the previous epoch's, and returns True once ``patience`` epochs have
    passed without beating the best loss.
    """

    def __init__(self, optimizer: Adam, factor: float = 0.5, patience: int = 5):
        if patience < 1:
            raise ValueError(f"patience must be >= 1, got {patience}")
        self.opt = optimizer
        self.factor = factor
        self.patience = patience
        self.prev: float | None = None
        self.best = math.inf
        self.bad_epochs = 0
        self.halvings = 0

    def update(self, val_loss: float) -> bool:
        if self.prev is not None and val_loss > self.prev:
            self.opt.lr *= self.factor
            self.halvings += 1
        self.prev = val_loss
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved(self) -> bool:
        return self.bad_epochs == 0
