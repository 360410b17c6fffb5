"""Type-1 and type-2 non-uniform FFTs in one to three dimensions.

Both transforms use the ``+i`` sign::

    type 1:  F[k] = sum_j c_j exp(+i <k, t_j>)        (points -> modes)
    type 2:  f_j  = sum_k F[k] exp(+i <k, t_j>)        (modes -> points)

with ``t_j`` in ``[-pi, pi)^d`` and ``k`` ranging over ``{-m_l..m_l}`` per
dimension.  Mode tensors are C-ordered, entry ``k + m``.

The algorithm is the usual gridding scheme: spread onto an oversampled fine
grid with the exponential-of-semicircle window
``exp(beta (sqrt(1 - z^2) - 1))``, one FFT, then divide by the window's Fourier
transform (type 1); type 2 runs the same steps backwards.
"""
from __future__ import annotations

import math
from typing import Iterable

import numpy as np
import scipy.fft

from . import _spread

__all__ = [
    "NufftPlan",
    "nufft_type1",
    "nufft_type2",
    "nufft_type1_batched",
    "scale_points",
]

MIN_TOL = 1e-14
_MAX_WIDTH = 16
_CHUNK_POINTS = 1 << 16
_CHUNK_BYTES = 1 << 26
_MAX_CHUNKS = 64


def scale_points(X, L: float) -> np.ndarray:
    """Map inputs in ``[-L, L]^d`` to NUFFT angles ``t = pi x / (2L)``."""
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    X = np.asarray(X, dtype=float)
    if X.size and np.max(np.abs(X)) > L:
        raise ValueError(f"input coordinates exceed the half-period L={L}")
    return X * (np.pi / (2.0 * L))


class NufftPlan:
    """Precomputed fine-grid geometry and deconvolution factors.

    Parameters
    ----------
    modes : int or sequence of int
        Number of output modes per dimension, each odd (``2m + 1``).
    eps : float
        Requested relative accuracy, at least ``1e-14``.
    upsampfac : float
        Oversampling ratio of the fine grid; must be at least 2.
    """

    def __init__(self, modes, eps: float = 1e-10, upsampfac: float = 2.0):
        modes = tuple(int(M) for M in np.atleast_1d(modes))
        if not 1 <= len(modes) <= 3:
            raise ValueError(f"NUFFT supports 1 to 3 dimensions, got {len(modes)}")
        for M in modes:
            if M < 1 or M % 2 == 0:
                raise ValueError(f"mode counts must be odd and positive, got {modes}")
        if not eps >= MIN_TOL:
            raise ValueError(f"tolerance {eps} is below achievable precision {MIN_TOL}")
        if not eps < 1:
            raise ValueError(f"tolerance must be < 1, got {eps}")
        if upsampfac < 2.0:
            raise ValueError(f"upsampfac must be >= 2, got {upsampfac}")
        self.modes = modes
        self.d = len(modes)
        self.eps = float(eps)
        self.upsampfac = float(upsampfac)
        # window width and shape rule for sigma = 2 (Barnett, Magland & af Klinteberg)
        ns = int(math.ceil(-math.log10(eps / 10.0)))
        self.width = min(max(ns, 2), _MAX_WIDTH)
        self.beta = 2.30 * self.width * (self.upsampfac / 2.0)
        self.fine_shape = tuple(
            scipy.fft.next_fast_len(max(int(math.ceil(self.upsampfac * M)), 2 * self.width)) for M in modes
        )
        self._deconv = [self._window_transform(M, nf) for M, nf in zip(modes, self.fine_shape)]
        self._index = [np.r_[nf - M // 2 : nf, 0 : M // 2 + 1] for M, nf in zip(modes, self.fine_shape)]

    def __repr__(self):
        return (
            f"NufftPlan(modes={self.modes}, eps={self.eps:g}, fine_shape={self.fine_shape}, "
            f"width={self.width}, beta={self.beta:.3f})"
        )

    def _window_transform(self, M: int, nf: int) -> np.ndarray:
        # p_k = (1/h) int psi(x) exp(ikx) dx with psi(x) = phi(x / alpha), alpha = ns h / 2
        ns, beta = self.width, self.beta
        z, w = np.polynomial.legendre.leggauss(max(200, 8 * ns))
        phi = np.exp(beta * (np.sqrt(1.0 - z * z) - 1.0))
        k = np.arange(-(M // 2), M // 2 + 1)
        alpha = ns * np.pi / nf
        return 0.5 * ns * (np.cos(np.outer(k, z) * alpha) @ (w * phi))

    def deconvolution(self) -> np.ndarray:
        """Outer product of the per-dimension window transforms, shape ``modes``."""
        out = self._deconv[0]
        for p in self._deconv[1:]:
            out = np.multiply.outer(out, p)
        return out

    # -- point handling -----------------------------------------------------
    def _grid_coords(self, points) -> list[np.ndarray]:
        t = np.asarray(points, dtype=float)
        if t.ndim == 1 and self.d == 1:
            t = t[:, None]
        if t.ndim != 2 or t.shape[1] != self.d:
            raise ValueError(f"points must have shape (n, {self.d}), got {np.shape(points)}")
        if t.size and (not np.all(np.isfinite(t)) or t.min() < -np.pi or t.max() >= np.pi):
            raise ValueError("NUFFT points must lie in [-pi, pi)")
        coords = []
        for ax, nf in enumerate(self.fine_shape):
            u = t[:, ax]
            u = np.where(u < 0, u + 2.0 * np.pi, u)
            coords.append(np.ascontiguousarray(u * (nf / (2.0 * np.pi))))
        return coords

    @staticmethod
    def _weights_2d(weights, n: int) -> tuple[np.ndarray, bool]:
        c = np.asarray(weights)
        single = c.ndim == 1
        if single:
            c = c[:, None]
        if c.ndim != 2 or c.shape[0] != n:
            raise ValueError(f"got {c.shape[0]} weights for {n} points")
        return np.ascontiguousarray(c, dtype=complex), single

    def _chunking(self, n: int, ntrans: int) -> np.ndarray:
        grid_bytes = 16 * ntrans * int(np.prod(self.fine_shape))
        nchunks = max(1, min(-(-n // _CHUNK_POINTS), _MAX_CHUNKS, _CHUNK_BYTES // max(grid_bytes, 1)))
        return np.linspace(0, n, nchunks + 1).astype(np.int64)

    # -- type 1 -------------------------------------------------------------
    def new_grid(self, ntrans: int = 1) -> np.ndarray:
        return np.zeros((ntrans,) + self.fine_shape, dtype=complex)

    def spread(self, points, weights, grid: np.ndarray) -> np.ndarray:
        """Accumulate the windowed weights into ``grid`` (shape ``(ntrans,) + fine_shape``)."""
        coords = self._grid_coords(points)
        n = coords[0].shape[0]
        c, _ = self._weights_2d(weights, n)
        if grid.shape != (c.shape[1],) + self.fine_shape:
            raise ValueError(f"grid shape {grid.shape} does not match {c.shape[1]} transforms")
        if n == 0:
            return grid
        bounds = self._chunking(n, c.shape[1])
        private = np.zeros((len(bounds) - 1,) + grid.shape, dtype=complex)
        if self.d == 1:
            _spread.spread_1d(coords[0], c, self.width, self.beta, private, bounds)
        elif self.d == 2:
            _spread.spread_2d(coords[0], coords[1], c, self.width, self.beta, private, bounds)
        else:
            _spread.spread_3d(coords[0], coords[1], coords[2], c, self.width, self.beta, private, bounds)
        for block in private:
            grid += block
        return grid

    def finish_type1(self, grid: np.ndarray) -> np.ndarray:
        """FFT a spread fine grid and return the deconvolved central modes."""
        axes = tuple(range(1, self.d + 1))
        spec = scipy.fft.ifftn(grid, axes=axes, norm="forward")
        out = spec[(slice(None),) + np.ix_(*self._index)]
        return out / self.deconvolution()

    def type1(self, points, weights) -> np.ndarray:
        coords_n = np.shape(points)[0]
        c, single = self._weights_2d(weights, coords_n)
        grid = self.spread(points, c, self.new_grid(c.shape[1]))
        out = self.finish_type1(grid)
        return out[0] if single else out

    # -- type 2 -------------------------------------------------------------
    def type2(self, points, coeffs) -> np.ndarray:
        coords = self._grid_coords(points)
        F = np.asarray(coeffs, dtype=complex)
        single = F.shape == self.modes
        if single:
            F = F[None]
        if F.shape[1:] != self.modes:
            raise ValueError(f"coefficient tensor shape {np.shape(coeffs)} does not match modes {self.modes}")
        grid = np.zeros((F.shape[0],) + self.fine_shape, dtype=complex)
        grid[(slice(None),) + np.ix_(*self._index)] = F / self.deconvolution()
        axes = tuple(range(1, self.d + 1))
        grid = scipy.fft.ifftn(grid, axes=axes, norm="forward")
        n = coords[0].shape[0]
        out = np.empty((n, F.shape[0]), dtype=complex)
        if n:
            if self.d == 1:
                _spread.interp_1d(coords[0], grid, self.width, self.beta, out)
            elif self.d == 2:
                _spread.interp_2d(coords[0], coords[1], grid, self.width, self.beta, out)
            else:
                _spread.interp_3d(coords[0], coords[1], coords[2], grid, self.width, self.beta, out)
        return out[:, 0] if single else out.T


def nufft_type1(points, weights, plan: NufftPlan) -> np.ndarray:
    """``F[k] = sum_j weights_j exp(+i <k, points_j>)`` over the plan's modes.

    ``weights`` may be ``(n,)`` or ``(n, ntrans)``; in the latter case the
    result stacks ``ntrans`` mode tensors along a leading axis.
    """
    return plan.type1(points, weights)


def nufft_type2(points, coeffs, plan: NufftPlan) -> np.ndarray:
    """``f_j = sum_k coeffs[k] exp(+i <k, points_j>)``."""
    return plan.type2(points, coeffs)


def nufft_type1_batched(point_batches: Iterable, weight_batches: Iterable, plan: NufftPlan) -> np.ndarray:
    """Type-1 transform of a dataset delivered in pieces.

    All batches are spread into one fine grid and a single FFT finishes the
    transform, so peak memory is one fine grid plus one batch.
    """
    grid = None
    single = True
    for pts, w in zip(point_batches, weight_batches):
        w = np.asarray(w)
        if grid is None:
            single = w.ndim == 1
            grid = plan.new_grid(1 if single else w.shape[1])
        plan.spread(pts, w, grid)
    if grid is None:
        raise ValueError("no batches given")
    out = plan.finish_type1(grid)
    return out[0] if single else out
