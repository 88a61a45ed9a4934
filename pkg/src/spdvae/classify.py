"""Riemannian classifiers: minimum distance to mean, k-nearest neighbours
under the affine-invariant distance, and a linear SVM in tangent space."""
from __future__ import annotations

import numpy as np

from . import linalg, manifold
from .errors import InvalidInput, NonConvergence
from .manifold import ReferencePoint

TIE_RTOL = 1e-12


def _check_fit_input(x, y, n_classes):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if x.ndim != 3 or len(x) != len(y):
        raise InvalidInput(f"expected (n, N, N) matrices and n labels, got {x.shape} and {y.shape}")
    present = set(np.unique(y).tolist())
    missing = [k for k in range(n_classes) if k not in present]
    if missing:
        raise InvalidInput(f"no training samples for class {missing[0]}")
    if present - set(range(n_classes)):
        raise InvalidInput(f"labels must lie in 0..{n_classes - 1}")
    return x, y


def distances_to(query: np.ndarray, points: np.ndarray) -> np.ndarray:
    """AIRM distances from one matrix to each of ``points``."""
    isq = linalg.matrix_inv_sqrt(query)
    w = np.linalg.eigvalsh(linalg.symmetrize(isq @ points @ isq))
    return np.sqrt(np.sum(np.log(np.maximum(w, linalg.EPS)) ** 2, axis=-1))


class MDM:
    """Assign the class whose Frechet mean is nearest; ties go to the lower class."""

    def __init__(self, n_classes: int = 2, tol: float = 1e-8, max_iter: int = 50):
        self.n_classes = n_classes
        self.tol = tol
        self.max_iter = max_iter
        self.means_ = None

    def fit(self, x, y):
        x, y = _check_fit_input(x, y, self.n_classes)
        self.means_ = np.stack([
            manifold.frechet_mean(x[y == k], self.tol, self.max_iter) for k in range(self.n_classes)
        ])
        return self

    def distances(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([distances_to(m, x) for m in self.means_], axis=-1)

    def predict(self, x) -> np.ndarray:
        d = self.distances(np.asarray(x, dtype=float).reshape(-1, *self.means_.shape[-2:]))
        dmin = d.min(axis=1, keepdims=True)
        return np.argmax(d <= dmin + TIE_RTOL * np.maximum(1.0, dmin), axis=1)


class KNN:
    """Majority vote among the ``k`` nearest training matrices.

    Distance ties keep training order; vote ties go to the lower class.
    """

    def __init__(self, k: int = 5, n_classes: int = 2):
        if k < 1:
            raise InvalidInput("k must be at least 1")
        self.k = k
        self.n_classes = n_classes

    def fit(self, x, y):
        x, y = _check_fit_input(x, y, self.n_classes)
        if self.k > len(x):
            raise InvalidInput(f"k={self.k} exceeds training size {len(x)}")
        self.x_, self.y_ = x, y
        return self

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, *self.x_.shape[-2:])
        out = np.empty(len(x), dtype=int)
        for i, q in enumerate(x):
            d = distances_to(q, self.x_)
            nearest = np.argsort(d, kind="stable")[: self.k]
            votes = np.bincount(self.y_[nearest], minlength=self.n_classes)
            out[i] = int(np.argmax(votes))
        return out


def smo_linear_svm(x: np.ndarray, y: np.ndarray, c: float = 1.0, tol: float = 1e-5,
                   max_iter: int | None = None):
    """Soft-margin linear SVM via SMO on the dual with second-order working
    set selection. ``y`` is in {-1, +1}. Returns ``(w, b, alpha, n_iter)``.
    """
    n, d = x.shape
    y = y.astype(float)
    max_iter = max_iter or max(100_000, 100 * n)
    alpha = np.zeros(n)
    w = np.zeros(d)
    kdiag = np.einsum("ij,ij->i", x, x)
    tau = 1e-12
    for it in range(max_iter):
        grad = y * (x @ w) - 1.0
        score = -y * grad
        up = ((alpha < c) & (y > 0)) | ((alpha > 0) & (y < 0))
        low = ((alpha < c) & (y < 0)) | ((alpha > 0) & (y > 0))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        m_up = score[i]
        m_low = score[low].min()
        if m_up - m_low < tol:
            break
        cand = low & (score < m_up)
        kij = x @ x[i]
        a = kdiag[i] + kdiag - 2.0 * kij
        a = np.where(a > 0, a, tau)
        bgap = m_up - score
        obj = np.where(cand, -(bgap**2) / a, np.inf)
        j = int(np.argmin(obj))
        yi, yj = y[i], y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        quad = a[j]
        gi, gj = grad[i], grad[j]
        if yi != yj:
            delta = (-gi - gj) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > c:
                    ai, aj = c, c - diff
            elif aj > c:
                aj, ai = c, c + diff
        else:
            delta = (gi - gj) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > c:
                if ai > c:
                    ai, aj = c, total - c
            elif aj < 0:
                aj, ai = 0.0, total
            if total > c:
                if aj > c:
                    aj, ai = c, total - c
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        w += (ai - ai_old) * yi * x[i] + (aj - aj_old) * yj * x[j]
    else:
        raise NonConvergence(f"SMO did not converge in {max_iter} iterations (gap {m_up - m_low:.3e})",
                             residual=float(m_up - m_low))
    grad = y * (x @ w) - 1.0
    free = (alpha > 0) & (alpha < c)
    yg = y * grad
    if free.any():
        rho = yg[free].mean()
    else:
        ub_mask = ((alpha >= c) & (y < 0)) | ((alpha <= 0) & (y > 0))
        lb_mask = ((alpha >= c) & (y > 0)) | ((alpha <= 0) & (y < 0))
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = 0.5 * (ub + lb) if np.isfinite(ub + lb) else 0.0
    return w, -rho, alpha, it


def primal_objective(w, b, x, y, c) -> float:
    margins = y * (x @ w + b)
    return 0.5 * float(w @ w) + c * float(np.sum(np.maximum(0.0, 1.0 - margins)))


class TangentSVC:
    """Linear soft-margin SVM on tangent vectors at the training Frechet mean."""

    def __init__(self, c: float = 1.0, tol: float = 1e-5, frechet_tol: float = 1e-8,
                 frechet_max_iter: int = 50):
        self.c = c
        self.tol = tol
        self.frechet_tol = frechet_tol
        self.frechet_max_iter = frechet_max_iter

    def features(self, x) -> np.ndarray:
        return manifold.vectorize(manifold.whitened_log(x, self.ref_))

    def fit(self, x, y):
        x, y = _check_fit_input(x, y, 2)
        self.ref_ = ReferencePoint.from_point(
            manifold.frechet_mean(x, self.frechet_tol, self.frechet_max_iter))
        feats = self.features(x)
        self.weight_, self.bias_, self.alpha_, self.n_iter_ = smo_linear_svm(
            feats, np.where(y == 1, 1.0, -1.0), self.c, self.tol)
        return self

    def decision_function(self, x) -> np.ndarray:
        return self.features(np.asarray(x, dtype=float)) @ self.weight_ + self.bias_

    def predict(self, x) -> np.ndarray:
        return (self.decision_function(x) > 0).astype(int)


def make_classifier(name: str, knn_k: int = 5, svc_c: float = 1.0, svc_tol: float = 1e-5,
                    n_classes: int = 2):
    name = name.lower()
    if name == "mdm":
        return MDM(n_classes)
    if name == "knn":
        return KNN(knn_k, n_classes)
    if name == "svc":
        return TangentSVC(svc_c, svc_tol)
    raise InvalidInput(f"unknown classifier {name!r}")
