"""Affine, batch-normalization and activation layers."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidInput
from . import autograd as ag
from .autograd import Tensor


class Module:
    training = True

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def named_buffers(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")
        yield from self._buffers(prefix)

    def _buffers(self, prefix):
        return ()

    def set_training(self, mode: bool):
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Module):
                value.set_training(mode)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.set_training(mode)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, x):
        return self.forward(x)


class Linear(Module):
    """``y = x W^T + b`` with Glorot-uniform weights and zero bias."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        limit = np.sqrt(6.0 / (in_features + out_features))
        self.weight = Tensor(rng.uniform(-limit, limit, (out_features, in_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    @property
    def in_features(self):
        return self.weight.shape[1]

    def forward(self, x):
        x = ag.as_tensor(x)
        if x.shape[-1] != self.in_features:
            raise InvalidInput(f"Linear expects {self.in_features} features, got {x.shape[-1]}")
        return x @ self.weight.mT + self.bias


class BatchNorm1d(Module):
    """Per-feature batch normalization with running statistics.

    Training mode normalizes with the biased batch variance and updates the
    running variance with the unbiased one.
    """

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.weight = Tensor(np.ones(num_features), requires_grad=True)
        self.bias = Tensor(np.zeros(num_features), requires_grad=True)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.momentum = momentum
        self.eps = eps

    def _buffers(self, prefix):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var

    def forward(self, x):
        x = ag.as_tensor(x)
        if x.shape[-1] != self.running_mean.shape[0]:
            raise InvalidInput(f"BatchNorm1d expects {self.running_mean.shape[0]} features, got {x.shape[-1]}")
        if self.training:
            n = x.shape[0]
            if n < 2:
                raise InvalidInput("batch normalization in training mode needs at least 2 samples")
            mu = x.mean(axis=0, keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=0, keepdims=True)
            xhat = centered * ag.power(var + self.eps, -0.5)
            m = self.momentum
            self.running_mean[:] = (1 - m) * self.running_mean + m * mu.data[0]
            self.running_var[:] = (1 - m) * self.running_var + m * var.data[0] * n / (n - 1)
        else:
            xhat = (x - self.running_mean) * (1.0 / np.sqrt(self.running_var + self.eps))
        return xhat * self.weight + self.bias


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.01):
        self.slope = slope

    def forward(self, x):
        return ag.leaky_relu(x, self.slope)


class Block(Module):
    """Linear -> batch normalization -> LeakyReLU."""

    def __init__(self, in_features, out_features, rng, slope=0.01, bn_momentum=0.1, bn_eps=1e-5):
        self.linear = Linear(in_features, out_features, rng)
        self.norm = BatchNorm1d(out_features, bn_momentum, bn_eps)
        self.act = LeakyReLU(slope)

    def forward(self, x):
        return self.act(self.norm(self.linear(x)))


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def reparameterize(mu, log_var, noise) -> Tensor:
    """``mu + noise * exp(0.5 * log_var)`` with ``noise`` held constant."""
    mu, log_var = ag.as_tensor(mu), ag.as_tensor(log_var)
    noise = np.asarray(noise, dtype=float)
    if mu.shape != log_var.shape or mu.shape != noise.shape:
        raise InvalidInput(f"shape mismatch: {mu.shape}, {log_var.shape}, {noise.shape}")
    return mu + ag.exp(log_var * 0.5) * noise
