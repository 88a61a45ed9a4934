"""Synthetic SPD matrices from a trained model by prior or posterior sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import InvalidInput
from .vae import RgpVae, decode_batch, encode_batch

MODES = ("prior", "posterior")


@dataclass
class GenerationConfig:
    mode: str = "prior"
    noise_scale: float = 2.2
    prior_count: int = 5000
    posterior_ratio: int = 5
    seed: int = 0
    chunk_size: int = 2048

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInput(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.noise_scale > 0:
            raise InvalidInput("noise_scale must be positive")
        if self.prior_count < 1 or self.posterior_ratio < 1:
            raise InvalidInput("counts must be at least 1")


def _decode_chunked(model, z, chunk):
    return np.concatenate([decode_batch(model, z[i:i + chunk]) for i in range(0, len(z), chunk)])


def sample_prior(model: RgpVae, cfg: GenerationConfig, rng=None) -> np.ndarray:
    """Decode ``noise_scale * eps`` with ``eps ~ N(0, I)``."""
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    z = cfg.noise_scale * rng.standard_normal((cfg.prior_count, model.config.latent_dim))
    return _decode_chunked(model, z, cfg.chunk_size)


def sample_posterior(model: RgpVae, real, cfg: GenerationConfig, rng=None) -> np.ndarray:
    """``posterior_ratio`` variants per real matrix.

    Each variant decodes ``mu + noise_scale * eps * exp(0.5 log_var)``.
    Output is grouped by source matrix: rows ``i*ratio .. (i+1)*ratio - 1``
    come from ``real[i]``.
    """
    real = np.asarray(real, dtype=float)
    if real.ndim != 3 or len(real) == 0:
        raise InvalidInput("posterior sampling needs a non-empty stack of matrices")
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    mu, log_var = encode_batch(model, real)
    mu = np.repeat(mu, cfg.posterior_ratio, axis=0)
    std = np.repeat(np.exp(0.5 * log_var), cfg.posterior_ratio, axis=0)
    z = mu + cfg.noise_scale * rng.standard_normal(mu.shape) * std
    return _decode_chunked(model, z, cfg.chunk_size)


def generate(model: RgpVae, cfg: GenerationConfig, real=None) -> np.ndarray:
    if cfg.mode == "prior":
        return sample_prior(model, cfg)
    if real is None:
        raise InvalidInput("posterior mode needs real matrices")
    return sample_posterior(model, real, cfg)


@dataclass
class ValidityReport:
    asymmetry: np.ndarray
    min_eigenvalue: np.ndarray
    valid: np.ndarray

    @property
    def pass_fraction(self) -> float:
        return float(np.mean(self.valid)) if len(self.valid) else 1.0

    @property
    def n_invalid(self) -> int:
        return int(np.sum(~self.valid))

    def worst_asymmetry(self) -> tuple[int, float]:
        i = int(np.argmax(self.asymmetry))
        return i, float(self.asymmetry[i])

    def to_dict(self) -> dict:
        return {
            "n": int(len(self.valid)),
            "n_invalid": self.n_invalid,
            "pass_fraction": self.pass_fraction,
            "max_asymmetry": float(self.asymmetry.max()) if len(self.valid) else 0.0,
            "min_eigenvalue": float(self.min_eigenvalue.min()) if len(self.valid) else float("nan"),
        }


def validity_audit(matrices, eps: float = linalg.EPS, sym_tol: float = 1e-10) -> ValidityReport:
    """Symmetry deviation, smallest eigenvalue and pass flag per matrix."""
    m = np.asarray(matrices, dtype=float)
    if m.ndim == 2:
        m = m[None]
    if len(m) == 0:
        return ValidityReport(np.zeros(0), np.zeros(0), np.zeros(0, dtype=bool))
    finite = np.all(np.isfinite(m), axis=(-1, -2))
    safe = np.where(finite[:, None, None], m, 0.0)
    asym = np.max(np.abs(safe - np.swapaxes(safe, -1, -2)), axis=(-1, -2))
    asym = np.where(finite, asym, np.inf)
    lam = np.linalg.eigvalsh(0.5 * (safe + np.swapaxes(safe, -1, -2)))[:, 0]
    lam = np.where(finite, lam, -np.inf)
    valid = linalg.is_spd(m, eps, sym_tol)
    return ValidityReport(asym, lam, valid)
