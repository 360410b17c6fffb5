"""Multilevel Toeplitz operators and the small operator algebra the
estimators assemble their normal equations from.

A d-level Toeplitz operator on the grid ``{-m..m}^d`` is determined by its
generating tensor ``g(q)``, ``q`` in ``{-2m..2m}^d``; its dense form is
``T[k1, k2] = g(k2 - k1)``.  Products with a vector go through a circulant
embedding of size at least ``4m + 1`` per dimension, so one matvec costs a
pair of FFTs of that size.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.fft

from .fourier_grid import MultiIndexGrid
from .nufft import NufftPlan, scale_points

__all__ = [
    "LinearOperatorExpr",
    "ToeplitzOperator",
    "DiagonalOperator",
    "IdentityOperator",
    "ScaledOperator",
    "SumOperator",
    "SandwichOperator",
    "DenseOperator",
    "BlockOperator",
    "toeplitz_from_generating",
    "toeplitz_matvec",
    "build_empirical_covariance",
    "empirical_moments",
]


class LinearOperatorExpr:
    """Base class: a square operator on ``C^dim`` with structural flags.

    Subclasses implement :meth:`apply` and :meth:`diagonal`.  ``hermitian`` and
    ``psd`` are derived from the structure of the expression, never checked
    numerically.
    """

    dim: int
    hermitian: bool = False
    psd: bool = False

    def apply(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def diagonal(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def hermitian_psd(self) -> bool:
        return self.hermitian and self.psd

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dim, self.dim)

    def _check(self, v) -> np.ndarray:
        v = np.asarray(v)
        if v.shape != (self.dim,):
            raise ValueError(f"vector of shape {v.shape} does not match operator dimension {self.dim}")
        return v

    def __matmul__(self, v):
        return self.apply(v)

    def __add__(self, other):
        if not isinstance(other, LinearOperatorExpr):
            return NotImplemented
        return SumOperator([self, other])

    def __mul__(self, alpha):
        if isinstance(alpha, LinearOperatorExpr) or not np.isscalar(alpha):
            return NotImplemented
        return ScaledOperator(self, alpha)

    __rmul__ = __mul__

    def to_dense(self) -> np.ndarray:
        eye = np.eye(self.dim, dtype=complex)
        return np.stack([self.apply(eye[:, j]) for j in range(self.dim)], axis=1)


class ToeplitzOperator(LinearOperatorExpr):
    """d-level Toeplitz operator with a cached circulant spectrum.

    Parameters
    ----------
    g : ndarray, shape ``(4m+1,) * d``
        Generating tensor, entry ``q + 2m``.
    hermitian : bool
        Require and record ``g(-q) == conj(g(q))`` (checked to 1e-10).
    psd : bool
        Caller's guarantee that the operator is positive semidefinite.
    scale : float
        Real multiplier applied to every product.
    pad : int, optional
        Circulant size per dimension, at least ``4m + 1``.  Defaults to the
        next FFT-friendly size.
    """

    def __init__(self, g, hermitian: bool = False, psd: bool = False, scale: float = 1.0, pad: int | None = None):
        g = np.asarray(g, dtype=complex)
        side = g.shape[0]
        if g.ndim < 1 or any(s != side for s in g.shape) or side % 4 != 1:
            raise ValueError(f"generating tensor must have shape (4m+1,)*d, got {g.shape}")
        self.d = g.ndim
        self.m = (side - 1) // 4
        self.grid = MultiIndexGrid(self.d, self.m)
        self.dim = self.grid.size
        self.g = g
        self.scale = float(scale)
        if hermitian:
            err = np.max(np.abs(g - np.conj(g[(slice(None, None, -1),) * self.d])), initial=0.0)
            if err > 1e-10 * max(1.0, np.max(np.abs(g))):
                raise ValueError(f"generating tensor is not Hermitian (max asymmetry {err:.3e})")
        self.hermitian = bool(hermitian)
        self.psd = bool(psd) and self.hermitian and self.scale >= 0
        if pad is None:
            pad = scipy.fft.next_fast_len(side)
        if pad < side:
            raise ValueError(f"circulant size {pad} is smaller than 4m+1 = {side}")
        self.pad = int(pad)
        # (T v)[k1] = sum_k2 g(k2 - k1) v[k2] is a cyclic convolution with r -> g(-r)
        c = np.zeros((self.pad,) * self.d, dtype=complex)
        idx = np.r_[0 : 2 * self.m + 1, self.pad - 2 * self.m : self.pad]
        r = np.r_[0 : 2 * self.m + 1, -2 * self.m : 0]
        c[np.ix_(*[idx] * self.d)] = g[np.ix_(*[2 * self.m - r] * self.d)]
        self.spectrum = scipy.fft.fftn(c)

    def apply(self, v):
        v = self._check(v)
        side = 2 * self.m + 1
        x = v.reshape((side,) * self.d)
        y = scipy.fft.ifftn(scipy.fft.fftn(x, s=(self.pad,) * self.d) * self.spectrum)
        out = y[(slice(0, side),) * self.d].reshape(-1)
        return self.scale * out if self.scale != 1.0 else out

    def diagonal(self):
        return np.full(self.dim, self.scale * self.g[(2 * self.m,) * self.d])

    def generating(self, q) -> complex:
        q = np.asarray(q, dtype=int).reshape(self.d)
        return self.scale * self.g[tuple(q + 2 * self.m)]

    def to_dense(self):
        k = self.grid.indices()
        diff = k[None, :, :] - k[:, None, :] + 2 * self.m
        return self.scale * self.g[tuple(diff[..., a] for a in range(self.d))]


class DiagonalOperator(LinearOperatorExpr):
    def __init__(self, diag):
        self.diag = np.asarray(diag)
        if self.diag.ndim != 1:
            raise ValueError("diagonal must be a 1-D array")
        self.dim = self.diag.size
        real = np.isrealobj(self.diag) or np.all(self.diag.imag == 0)
        self.hermitian = bool(real)
        self.psd = bool(real and np.all(self.diag.real >= 0))

    def apply(self, v):
        return self.diag * self._check(v)

    def diagonal(self):
        return self.diag.astype(complex)


class IdentityOperator(LinearOperatorExpr):
    hermitian = True
    psd = True

    def __init__(self, dim: int):
        self.dim = int(dim)

    def apply(self, v):
        return np.array(self._check(v), dtype=complex)

    def diagonal(self):
        return np.ones(self.dim, dtype=complex)


class ScaledOperator(LinearOperatorExpr):
    def __init__(self, op: LinearOperatorExpr, alpha):
        self.op = op
        self.alpha = alpha
        self.dim = op.dim
        real = np.isreal(alpha)
        self.hermitian = bool(op.hermitian and real)
        self.psd = bool(op.psd and real and np.real(alpha) >= 0)

    def apply(self, v):
        return self.alpha * self.op.apply(v)

    def diagonal(self):
        return self.alpha * self.op.diagonal()


class SumOperator(LinearOperatorExpr):
    def __init__(self, terms: Sequence[LinearOperatorExpr]):
        flat = []
        for t in terms:
            flat.extend(t.terms if isinstance(t, SumOperator) else [t])
        dims = {t.dim for t in flat}
        if len(dims) != 1:
            raise ValueError(f"cannot add operators of dimensions {sorted(dims)}")
        self.terms = flat
        self.dim = flat[0].dim
        self.hermitian = all(t.hermitian for t in flat)
        self.psd = all(t.psd for t in flat)

    def apply(self, v):
        v = self._check(v)
        out = self.terms[0].apply(v).astype(complex)
        for t in self.terms[1:]:
            out += t.apply(v)
        return out

    def diagonal(self):
        return sum(t.diagonal() for t in self.terms)


class SandwichOperator(LinearOperatorExpr):
    """``diag(a)^* @ inner @ diag(a)``."""

    def __init__(self, a, inner: LinearOperatorExpr):
        self.a = np.asarray(a, dtype=complex)
        if self.a.shape != (inner.dim,):
            raise ValueError(f"diagonal of length {self.a.size} does not match inner dimension {inner.dim}")
        self.inner = inner
        self.dim = inner.dim
        self.hermitian = inner.hermitian
        self.psd = inner.psd

    def apply(self, v):
        return np.conj(self.a) * self.inner.apply(self.a * self._check(v))

    def diagonal(self):
        return np.abs(self.a) ** 2 * self.inner.diagonal()


class DenseOperator(LinearOperatorExpr):
    def __init__(self, matrix, hermitian: bool = False, psd: bool = False):
        self.matrix = np.asarray(matrix)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError(f"dense operator must be square, got {self.matrix.shape}")
        self.dim = self.matrix.shape[0]
        self.hermitian = bool(hermitian)
        self.psd = bool(psd and hermitian)

    def apply(self, v):
        return self.matrix @ self._check(v)

    def diagonal(self):
        return np.diag(self.matrix).astype(complex)

    def to_dense(self):
        return np.array(self.matrix, dtype=complex)


class BlockOperator(LinearOperatorExpr):
    """Square block operator; blocks are operators or dense arrays (``None`` is zero).

    Off-diagonal dense blocks act as plain matrices; diagonal blocks must be
    square operators.
    """

    def __init__(self, blocks, hermitian: bool = False, psd: bool = False):
        nb = len(blocks)
        if any(len(row) != nb for row in blocks):
            raise ValueError("block layout must be square")
        sizes = []
        for i in range(nb):
            b = blocks[i][i]
            if b is None:
                raise ValueError(f"diagonal block {i} is missing")
            sizes.append(b.dim if isinstance(b, LinearOperatorExpr) else np.shape(b)[0])
        for i in range(nb):
            for j in range(nb):
                b = blocks[i][j]
                if b is None:
                    continue
                shape = b.shape if isinstance(b, LinearOperatorExpr) else np.shape(b)
                if tuple(shape) != (sizes[i], sizes[j]):
                    raise ValueError(f"block ({i}, {j}) has shape {shape}, expected {(sizes[i], sizes[j])}")
        self.blocks = blocks
        self.sizes = sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.dim = int(self.offsets[-1])
        self.hermitian = bool(hermitian)
        self.psd = bool(psd and hermitian)

    def apply(self, v):
        v = self._check(v)
        parts = [v[self.offsets[j] : self.offsets[j + 1]] for j in range(len(self.sizes))]
        out = np.zeros(self.dim, dtype=complex)
        for i, row in enumerate(self.blocks):
            acc = out[self.offsets[i] : self.offsets[i + 1]]
            for j, b in enumerate(row):
                if b is None:
                    continue
                acc += b.apply(parts[j]) if isinstance(b, LinearOperatorExpr) else b @ parts[j]
        return out

    def diagonal(self):
        out = []
        for i, row in enumerate(self.blocks):
            b = row[i]
            out.append(b.diagonal() if isinstance(b, LinearOperatorExpr) else np.diag(b).astype(complex))
        return np.concatenate(out)


def toeplitz_from_generating(g, d: int, m: int, hermitian_flag: bool = True, psd: bool = False) -> ToeplitzOperator:
    """Wrap a generating tensor of shape ``(4m+1,)*d`` as a Toeplitz operator."""
    g = np.asarray(g)
    if g.shape != (4 * m + 1,) * d:
        raise ValueError(f"expected generating tensor of shape {(4 * m + 1,) * d}, got {g.shape}")
    return ToeplitzOperator(g, hermitian=hermitian_flag, psd=psd)


def toeplitz_matvec(op: ToeplitzOperator, v) -> np.ndarray:
    return op.apply(v)


def empirical_moments(X, L: float, m: int, y=None, eps: float = 1e-10):
    """Covariance generating tensor and, optionally, the cross-moment vector.

    Returns ``g`` with ``g(q) = mean_j exp(i pi <q, X_j> / 2L)`` on
    ``{-2m..2m}^d`` and, when ``y`` is given, the flattened
    ``v_k = mean_j y_j exp(-i pi <k, X_j> / 2L)`` on ``{-m..m}^d``.  Both come
    from a single spreading pass.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n == 0:
        raise ValueError("cannot build a covariance from zero samples")
    t = scale_points(X, L)
    plan = NufftPlan((4 * m + 1,) * d, eps)
    if y is None:
        return plan.type1(t, np.full(n, 1.0 / n)), None
    w = np.empty((n, 2), dtype=complex)
    w[:, 0] = 1.0 / n
    w[:, 1] = np.asarray(y) / n
    F = plan.type1(t, w)
    centre = (slice(m, 3 * m + 1),) * d
    # v_k uses exp(-i...), i.e. the type-1 output at -k: reverse every axis
    v = F[1][centre][(slice(None, None, -1),) * d]
    return F[0], np.ascontiguousarray(v).reshape(-1)


def build_empirical_covariance(samples, m: int, L: float | None = None, eps: float = 1e-10) -> ToeplitzOperator:
    """``Phi^* Phi / n`` as a Hermitian PSD Toeplitz operator.

    ``samples`` is a :class:`~fastkern.model.SampleSet` or an ``(n, d)`` array
    (then ``L`` is required).
    """
    if hasattr(samples, "X"):
        X, L = samples.X, samples.L if L is None else L
    else:
        X = samples
    if L is None:
        raise ValueError("L is required when passing a raw array")
    g, _ = empirical_moments(X, L, m, eps=eps)
    g = 0.5 * (g + np.conj(g[(slice(None, None, -1),) * g.ndim]))
    return ToeplitzOperator(g, hermitian=True, psd=True)
