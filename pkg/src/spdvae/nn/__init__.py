"""Minimal neural-network toolkit: autodiff, layers and optimizers."""
from .autograd import Tensor, no_grad, spectral_vjp
from .layers import BatchNorm1d, Block, LeakyReLU, Linear, Module, Sequential, reparameterize
from .optim import AdamW, ReduceLROnPlateau, clip_gradients, global_norm, plateau_schedule

__all__ = [
    "Tensor", "no_grad", "spectral_vjp", "BatchNorm1d", "Block", "LeakyReLU", "Linear",
    "Module", "Sequential", "reparameterize", "AdamW", "ReduceLROnPlateau",
    "clip_gradients", "global_norm", "plateau_schedule",
]
