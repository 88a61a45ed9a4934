"""Symmetric eigendecomposition and spectral matrix functions.

All functions accept a single ``(n, n)`` matrix or a stack ``(..., n, n)``
and operate on the last two axes. Eigenvalues are returned in descending
order.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidInput, NumericalFailure

EPS = 1e-6
"""Eigenvalue floor maintained by every geometric operation."""

EXP_THRESHOLD = 20.0
"""Largest eigenvalue allowed into the scalar exponential before rescaling."""


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _check_square(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise InvalidInput(f"expected square matrices, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInput("matrix has non-finite entries")
    return m


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return ``(m + m^T) / 2``; the result is exactly symmetric."""
    m = _check_square(m)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def eigh(m: np.ndarray) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Only the lower triangle is read, so a matrix that is symmetric up to
    rounding is treated as its exactly symmetric counterpart.
    """
    m = _check_square(m)
    w, v = np.linalg.eigh(m)
    return EigenDecomposition(w[..., ::-1], v[..., ::-1])


def _compose(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def spectral_apply(m: np.ndarray, fn) -> np.ndarray:
    """Apply a scalar function through the spectrum: ``V fn(L) V^T``."""
    w, v = eigh(m)
    return _compose(v, fn(w))


def min_eigenvalue(m: np.ndarray) -> np.ndarray:
    m = _check_square(m)
    return np.linalg.eigvalsh(m)[..., 0]


def ensure_spd(m: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Shift the spectrum so the smallest eigenvalue is at least ``eps``.

    Matrices already satisfying the floor are returned unchanged (after
    symmetrization); the others receive ``(eps - lambda_min) I``.
    """
    m = symmetrize(m)
    lam_min = min_eigenvalue(m)
    shift = np.where(lam_min < eps, eps - lam_min, 0.0)
    if not np.any(shift):
        return m
    n = m.shape[-1]
    return m + shift[..., None, None] * np.eye(n)


def matrix_log(m: np.ndarray) -> np.ndarray:
    """Principal logarithm of an SPD matrix."""
    w, v = eigh(ensure_spd(m))
    if np.any(w < EPS * (1 - 1e-8)) or not np.all(np.isfinite(w)):
        raise NumericalFailure(
            f"eigenvalue {w.min():.3e} below floor {EPS:g} after shifting"
        )
    return _compose(v, np.log(w))


def exp_scale(w: np.ndarray, threshold: float = EXP_THRESHOLD) -> np.ndarray:
    """Per-matrix factor applied to eigenvalues ahead of the exponential.

    ``w`` holds eigenvalues in descending order along the last axis.
    """
    lam_max = w[..., 0]
    return np.where(lam_max > threshold, threshold / np.where(lam_max > threshold, lam_max, 1.0), 1.0)


def matrix_exp(m: np.ndarray, threshold: float = EXP_THRESHOLD) -> np.ndarray:
    """Matrix exponential of a symmetric matrix with overflow protection.

    If the largest eigenvalue exceeds ``threshold`` the whole spectrum is
    multiplied by ``threshold / lambda_max`` first. The output is passed
    through :func:`ensure_spd`.
    """
    w, v = eigh(m)
    w = w * exp_scale(w, threshold)[..., None]
    return ensure_spd(_compose(v, np.exp(w)))


def _positive_spectrum(m: np.ndarray) -> EigenDecomposition:
    w, v = eigh(m)
    if np.any(w <= 0.0):
        raise NumericalFailure(f"non-positive eigenvalue {w.min():.3e}")
    return EigenDecomposition(w, v)


def matrix_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = _positive_spectrum(m)
    return _compose(v, np.sqrt(w))


def matrix_inv_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = _positive_spectrum(m)
    return _compose(v, 1.0 / np.sqrt(w))


def matrix_power(m: np.ndarray, p: float) -> np.ndarray:
    w, v = _positive_spectrum(m)
    return _compose(v, w**p)


def is_spd(m: np.ndarray, eps: float = EPS, sym_tol: float = 1e-10) -> np.ndarray:
    """Boolean validity check: symmetric within ``sym_tol`` (relative to the
    largest entry) and smallest eigenvalue at least ``eps``."""
    m = np.asarray(m, dtype=float)
    finite = np.all(np.isfinite(m), axis=(-1, -2))
    safe = np.where(finite[..., None, None], m, 0.0)
    scale = np.maximum(np.max(np.abs(safe), axis=(-1, -2)), 1.0)
    asym = np.max(np.abs(safe - np.swapaxes(safe, -1, -2)), axis=(-1, -2))
    lam = np.linalg.eigvalsh(0.5 * (safe + np.swapaxes(safe, -1, -2)))[..., 0]
    # a shifted matrix sits at exactly eps; allow rounding in eigvalsh
    return finite & (asym <= sym_tol * scale) & (lam >= eps * (1 - 1e-6) - 1e-15 * scale)
