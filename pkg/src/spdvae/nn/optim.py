"""AdamW, global-norm clipping and plateau-based learning-rate decay."""
from __future__ import annotations

import numpy as np

from ..errors import NumericalFailure


class AdamW:
    """Adam with decoupled weight decay.

    Each step first shrinks every parameter by ``lr * weight_decay`` and
    then applies the bias-corrected Adam update.
    """

    def __init__(self, params, lr=1e-4, weight_decay=1e-6, betas=(0.9, 0.999), eps=1e-8, names=None):
        self.params = list(params)
        self.names = list(names) if names is not None else [f"param{i}" for i in range(len(self.params))]
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.exp_avg = [np.zeros_like(p.data) for p in self.params]
        self.exp_avg_sq = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for name, p in zip(self.names, self.params):
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericalFailure(f"non-finite gradient for parameter {name}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.exp_avg, self.exp_avg_sq):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            p.data *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self):
        return {"step": self.step_count, "lr": self.lr}


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None)))


def clip_gradients(params, max_norm: float = 1.0) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_norm([p.grad for p in params])
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class ReduceLROnPlateau:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without a relative improvement of ``threshold`` over the best loss."""

    def __init__(self, optimizer, factor=0.5, patience=20, threshold=1e-4):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.best = np.inf
        self.num_bad_epochs = 0

    def step(self, loss: float) -> float:
        improved = not np.isfinite(self.best) or loss < self.best - self.threshold * abs(self.best)
        if improved:
            self.best = loss
            self.num_bad_epochs = 0
        else:
            self.num_bad_epochs += 1
        if self.num_bad_epochs >= self.patience:
            self.optimizer.lr *= self.factor
            self.num_bad_epochs = 0
        return self.optimizer.lr


class _LrHolder:
    def __init__(self, lr):
        self.lr = lr


def plateau_schedule(history, lr=1e-4, patience=20, factor=0.5, threshold=1e-4) -> float:
    """Learning rate after replaying a loss history through the scheduler."""
    holder = _LrHolder(lr)
    sched = ReduceLROnPlateau(holder, factor, patience, threshold)
    for loss in history:
        sched.step(float(loss))
    return holder.lr
