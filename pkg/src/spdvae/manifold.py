"""Affine-invariant geometry on the manifold of SPD matrices.

Distances, tangent maps, the Karcher (Frechet) mean and congruence-based
parallel transport between subject means.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import InvalidInput, NonConvergence


@dataclass(frozen=True)
class ReferencePoint:
    """An SPD base point together with its cached square roots."""

    point: np.ndarray
    sqrt: np.ndarray
    inv_sqrt: np.ndarray

    @classmethod
    def from_point(cls, point) -> "ReferencePoint":
        point = linalg.ensure_spd(point)
        return cls(point, linalg.matrix_sqrt(point), linalg.matrix_inv_sqrt(point))

    @classmethod
    def identity(cls, n: int) -> "ReferencePoint":
        eye = np.eye(n)
        return cls(eye, eye.copy(), eye.copy())

    @property
    def dim(self) -> int:
        return self.point.shape[-1]


def _whiten(x: np.ndarray, inv_sqrt: np.ndarray) -> np.ndarray:
    return linalg.symmetrize(inv_sqrt @ x @ inv_sqrt)


def airm_distance(a, b) -> np.ndarray:
    """Affine-invariant distance ``||log(a^{-1/2} b a^{-1/2})||_F``.

    Broadcasts over leading axes.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-2:] != b.shape[-2:]:
        raise InvalidInput(f"dimension mismatch: {a.shape[-2:]} vs {b.shape[-2:]}")
    w = np.linalg.eigvalsh(_whiten(b, linalg.matrix_inv_sqrt(a)))
    return np.sqrt(np.sum(np.log(np.maximum(w, linalg.EPS)) ** 2, axis=-1))


def log_map(x, ref: ReferencePoint) -> np.ndarray:
    """Project SPD matrices onto the tangent space at ``ref``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != ref.dim:
        raise InvalidInput(f"dimension mismatch: {x.shape[-1]} vs {ref.dim}")
    s = linalg.matrix_log(_whiten(x, ref.inv_sqrt))
    return linalg.symmetrize(ref.sqrt @ s @ ref.sqrt)


def exp_map(s, ref: ReferencePoint) -> np.ndarray:
    """Map tangent matrices at ``ref`` back onto the manifold."""
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != ref.dim:
        raise InvalidInput(f"dimension mismatch: {s.shape[-1]} vs {ref.dim}")
    e = linalg.matrix_exp(_whiten(linalg.symmetrize(s), ref.inv_sqrt))
    return linalg.ensure_spd(ref.sqrt @ e @ ref.sqrt)


def whitened_log(x, ref: ReferencePoint) -> np.ndarray:
    """``log(P^{-1/2} x P^{-1/2})``: tangent coordinates normalized at ``ref``."""
    return linalg.matrix_log(_whiten(np.asarray(x, dtype=float), ref.inv_sqrt))


def frechet_mean(mats, tol: float = 1e-8, max_iter: int = 50, init=None) -> np.ndarray:
    """Karcher flow for the affine-invariant mean.

    Iterates ``G <- exp_G(t * mean_i log_G(X_i))`` starting from the
    arithmetic mean, and stops once the whitened mean tangent has Frobenius
    norm below ``tol``. The step ``t`` starts at 1 and is halved whenever the
    residual increases.
    """
    mats = np.asarray(mats, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    if mats.ndim != 3 or len(mats) == 0:
        raise InvalidInput("frechet_mean needs a non-empty stack of matrices")
    g = linalg.ensure_spd(mats.mean(axis=0) if init is None else init)
    if len(mats) == 1:
        return linalg.ensure_spd(mats[0])
    residual = previous = np.inf
    step_size = 1.0
    for _ in range(max_iter):
        g_sqrt = linalg.matrix_sqrt(g)
        g_isqrt = linalg.matrix_inv_sqrt(g)
        step = linalg.matrix_log(_whiten(mats, g_isqrt)).mean(axis=0)
        residual = float(np.linalg.norm(step))
        # unit steps overshoot on widely spread sets; damp when the residual grows
        if residual > previous:
            step_size *= 0.5
        previous = residual
        g = linalg.ensure_spd(g_sqrt @ linalg.matrix_exp(step_size * step) @ g_sqrt)
        if residual < tol:
            return g
    raise NonConvergence(
        f"Karcher flow did not reach tol={tol:g} in {max_iter} iterations "
        f"(residual {residual:.3e})",
        residual=residual,
    )


def transport_operator(from_mean, to_mean) -> np.ndarray:
    """Principal square root ``E = (G_t G_s^{-1})^{1/2}``.

    Computed through the similar symmetric matrix
    ``G_s^{-1/2} G_t G_s^{-1/2}`` so that ``E G_s E^T = G_t``.
    """
    s_sqrt = linalg.matrix_sqrt(from_mean)
    s_isqrt = linalg.matrix_inv_sqrt(from_mean)
    mid = linalg.matrix_sqrt(_whiten(np.asarray(to_mean, dtype=float), s_isqrt))
    return s_sqrt @ mid @ s_isqrt


def parallel_transport(x, from_mean, to_mean) -> np.ndarray:
    """Move ``x`` by the congruence taking ``from_mean`` onto ``to_mean``."""
    x = np.asarray(x, dtype=float)
    e = transport_operator(from_mean, to_mean)
    return linalg.ensure_spd(e @ x @ e.T)


def triu_indices(n: int):
    return np.triu_indices(n)


def vectorize(s) -> np.ndarray:
    """Row-major upper triangle (diagonal included), no off-diagonal weights."""
    s = np.asarray(s, dtype=float)
    if s.ndim < 2 or s.shape[-1] != s.shape[-2]:
        raise InvalidInput(f"expected square matrices, got shape {s.shape}")
    rows, cols = triu_indices(s.shape[-1])
    return s[..., rows, cols]


def dim_from_length(length: int) -> int:
    n = int(round((np.sqrt(8 * length + 1) - 1) / 2))
    if n * (n + 1) // 2 != length:
        raise InvalidInput(f"length {length} is not a triangular number")
    return n


def unvectorize(v, n: int | None = None) -> np.ndarray:
    """Inverse of :func:`vectorize`, mirroring values into both triangles."""
    v = np.asarray(v, dtype=float)
    length = v.shape[-1]
    if n is None:
        n = dim_from_length(length)
    elif n * (n + 1) // 2 != length:
        raise InvalidInput(f"vector length {length} does not match N={n} (expected {n * (n + 1) // 2})")
    rows, cols = triu_indices(n)
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., rows, cols] = v
    out[..., cols, rows] = v
    return out
