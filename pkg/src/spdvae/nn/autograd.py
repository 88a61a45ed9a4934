"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every operation builds a node holding its output array, its parent tensors
and a closure mapping the upstream gradient to one gradient per parent.
:meth:`Tensor.backward` walks the graph in reverse topological order.
"""
from __future__ import annotations

import contextlib

import numpy as np

from ..errors import InvalidInput, NumericalFailure

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate gradients of this tensor into every leaf that requires them."""
        if grad is None:
            if self.data.size != 1:
                raise InvalidInput("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=float)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.data.shape)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, power(as_tensor(other), -1.0))

    def __rtruediv__(self, other):
        return mul(as_tensor(other), power(self, -1.0))

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    @property
    def mT(self):
        return swap_last(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def neg(a) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    pos = a.data > 0
    return _node(np.where(pos, a.data, slope * a.data), (a,),
                 lambda g: (np.where(pos, g, slope * g),))


def where(cond, a, b) -> Tensor:
    """Select ``a`` where the constant mask ``cond`` holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return _node(np.where(cond, a.data, b.data), (a, b),
                 lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)))


# reductions and shape -----------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    shape = a.data.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    old = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swap_last(a) -> Tensor:
    return _node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def getitem(a, idx) -> Tensor:
    shape = a.data.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.multiply.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.data.ndim > 1 else np.multiply.outer(a.data, g)
        return ga, gb

    return _node(a.data @ b.data, (a, b), backward)


def sym_from_triu(v, n: int) -> Tensor:
    """Symmetric ``(..., n, n)`` matrices from upper-triangular vectors."""
    rows, cols = np.triu_indices(n)
    diag = rows == cols
    out = np.zeros(v.data.shape[:-1] + (n, n))
    out[..., rows, cols] = v.data
    out[..., cols, rows] = v.data

    def backward(g):
        gv = g[..., rows, cols] + g[..., cols, rows]
        gv[..., diag] *= 0.5
        return (gv,)

    return _node(out, (v,), backward)


def symmetrize(a) -> Tensor:
    return (a + swap_last(a)) * 0.5


# spectral -----------------------------------------------------------------

def loewner_matrix(w: np.ndarray, fw: np.ndarray, dfw: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Divided differences (f(l_i) - f(l_j)) / (l_i - l_j), with f'(l_i) on
    (near-)coincident pairs."""
    diff = w[..., :, None] - w[..., None, :]
    scale = np.maximum(1.0, np.maximum(np.abs(w[..., :, None]), np.abs(w[..., None, :])))
    close = np.abs(diff) < tol * scale
    fdiff = fw[..., :, None] - fw[..., None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        dd = np.where(close, 0.0, fdiff / np.where(close, 1.0, diff))
    deriv = 0.5 * (dfw[..., :, None] + dfw[..., None, :])
    return np.where(close, deriv, dd)


def spectral_vjp(w, v, upstream, f, df) -> np.ndarray:
    """VJP of ``X -> V f(L) V^T`` at a symmetric ``X`` with spectrum ``(w, v)``."""
    g = 0.5 * (upstream + np.swapaxes(upstream, -1, -2))
    vt = np.swapaxes(v, -1, -2)
    k = vt @ g @ v
    return v @ (loewner_matrix(w, f(w), df(w)) * k) @ vt


def spectral(x, f, df) -> Tensor:
    """Differentiable spectral function of symmetric matrices.

    ``f`` and ``df`` act elementwise on eigenvalues. Backpropagation uses the
    Daleckii-Krein formula; if it yields non-finite values the input is
    jittered by 1e-9 I and the gradient recomputed once.
    """
    w, v = np.linalg.eigh(x.data)
    out = (v * f(w)[..., None, :]) @ np.swapaxes(v, -1, -2)
    out = 0.5 * (out + np.swapaxes(out, -1, -2))

    def backward(g):
        gx = spectral_vjp(w, v, g, f, df)
        if not np.all(np.isfinite(gx)):
            n = x.data.shape[-1]
            wj, vj = np.linalg.eigh(x.data + 1e-9 * np.eye(n))
            gx = spectral_vjp(wj, vj, g, f, df)
            if not np.all(np.isfinite(gx)):
                raise NumericalFailure("non-finite gradient through spectral function")
        return (gx,)

    return _node(out, (x,), backward)


def matrix_log(x) -> Tensor:
    return spectral(x, np.log, lambda w: 1.0 / w)


def matrix_exp(x) -> Tensor:
    return spectral(x, np.exp, np.exp)


def eigvalsh_extreme(x, which: str = "max") -> Tensor:
    """Largest or smallest eigenvalue of each symmetric matrix."""
    w, v = np.linalg.eigh(x.data)
    k = -1 if which == "max" else 0
    vec = v[..., :, k]

    def backward(g):
        return (g[..., None, None] * vec[..., :, None] * vec[..., None, :],)

    return _node(w[..., k], (x,), backward)


def logdet_spd(x) -> Tensor:
    """``log det`` of SPD matrices via eigenvalues; gradient is ``X^{-1}``."""
    w, v = np.linalg.eigh(x.data)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise NumericalFailure(f"log-determinant of a non-positive-definite matrix (min eig {w.min():.3e})")
    inv = (v / w[..., None, :]) @ np.swapaxes(v, -1, -2)

    def backward(g):
        return (g[..., None, None] * inv,)

    return _node(np.sum(np.log(w), axis=-1), (x,), backward)
