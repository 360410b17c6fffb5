"""Compiled spreading (points -> fine grid) and interpolation (fine grid ->
points) loops for the exponential-of-semicircle window.

Coordinates arrive already in fine-grid units, ``x in [0, nf)``.  Each point
touches ``ns`` consecutive grid cells per dimension starting at
``ceil(x - ns/2)``, wrapped periodically.  Spreading writes into one private
grid per chunk of points; the caller reduces over chunks, so the result does
not depend on how many threads ran.
"""
import math
import os

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@njit(cache=True, inline="always")
def _window(x, ns, beta, out):
    half = 0.5 * ns
    i0 = int(math.ceil(x - half))
    for q in range(ns):
        z = (i0 + q - x) / half
        zz = 1.0 - z * z
        if zz > 0.0:
            out[q] = math.exp(beta * (math.sqrt(zz) - 1.0))
        else:
            out[q] = 0.0
    return i0


@njit(cache=True, inline="always")
def _wrap(i, nf):
    if i < 0:
        return i + nf
    if i >= nf:
        return i - nf
    return i


@njit(cache=True, parallel=True)
def spread_1d(x, c, ns, beta, grids, bounds):
    nchunks = grids.shape[0]
    nk = c.shape[1]
    nf = grids.shape[2]
    for ch in prange(nchunks):
        ker = np.empty(ns)
        g = grids[ch]
        for j in range(bounds[ch], bounds[ch + 1]):
            i0 = _window(x[j], ns, beta, ker)
            for q in range(ns):
                i = _wrap(i0 + q, nf)
                kq = ker[q]
                for t in range(nk):
                    g[t, i] += kq * c[j, t]


@njit(cache=True, parallel=True)
def spread_2d(x, y, c, ns, beta, grids, bounds):
    nchunks = grids.shape[0]
    nk = c.shape[1]
    nf0 = grids.shape[2]
    nf1 = grids.shape[3]
    for ch in prange(nchunks):
        kx = np.empty(ns)
        ky = np.empty(ns)
        iy = np.empty(ns, dtype=np.int64)
        g = grids[ch]
        for j in range(bounds[ch], bounds[ch + 1]):
            i0 = _window(x[j], ns, beta, kx)
            j0 = _window(y[j], ns, beta, ky)
            for q in range(ns):
                iy[q] = _wrap(j0 + q, nf1)
            for p in range(ns):
                ix = _wrap(i0 + p, nf0)
                for t in range(nk):
                    cp = kx[p] * c[j, t]
                    for q in range(ns):
                        g[t, ix, iy[q]] += cp * ky[q]


@njit(cache=True, parallel=True)
def spread_3d(x, y, z, c, ns, beta, grids, bounds):
    nchunks = grids.shape[0]
    nk = c.shape[1]
    nf0 = grids.shape[2]
    nf1 = grids.shape[3]
    nf2 = grids.shape[4]
    for ch in prange(nchunks):
        kx = np.empty(ns)
        ky = np.empty(ns)
        kz = np.empty(ns)
        iy = np.empty(ns, dtype=np.int64)
        iz = np.empty(ns, dtype=np.int64)
        g = grids[ch]
        for j in range(bounds[ch], bounds[ch + 1]):
            i0 = _window(x[j], ns, beta, kx)
            j0 = _window(y[j], ns, beta, ky)
            l0 = _window(z[j], ns, beta, kz)
            for q in range(ns):
                iy[q] = _wrap(j0 + q, nf1)
                iz[q] = _wrap(l0 + q, nf2)
            for p in range(ns):
                ix = _wrap(i0 + p, nf0)
                for q in range(ns):
                    for t in range(nk):
                        cpq = kx[p] * ky[q] * c[j, t]
                        for r in range(ns):
                            g[t, ix, iy[q], iz[r]] += cpq * kz[r]


def _chunk_bounds(n):
    nchunks = max(1, min(64, n // 4096))
    return np.linspace(0, n, nchunks + 1).astype(np.int64)


@njit(cache=True, parallel=True)
def _interp_1d(x, grid, ns, beta, out, bounds):
    nk = grid.shape[0]
    nf = grid.shape[1]
    for ch in prange(bounds.shape[0] - 1):
        ker = np.empty(ns)
        for j in range(bounds[ch], bounds[ch + 1]):
            i0 = _window(x[j], ns, beta, ker)
            for t in range(nk):
                acc = 0j
                for q in range(ns):
                    acc += ker[q] * grid[t, _wrap(i0 + q, nf)]
                out[j, t] = acc


@njit(cache=True, parallel=True)
def _interp_2d(x, y, grid, ns, beta, out, bounds):
    nk = grid.shape[0]
    nf0 = grid.shape[1]
    nf1 = grid.shape[2]
    for ch in prange(bounds.shape[0] - 1):
        kx = np.empty(ns)
        ky = np.empty(ns)
        for j in range(bounds[ch], bounds[ch + 1]):
            i0 = _window(x[j], ns, beta, kx)
            j0 = _window(y[j], ns, beta, ky)
            for t in range(nk):
                acc = 0j
                for p in range(ns):
                    ix = _wrap(i0 + p, nf0)
                    row = 0j
                    for q in range(ns):
                        row += ky[q] * grid[t, ix, _wrap(j0 + q, nf1)]
                    acc += kx[p] * row
                out[j, t] = acc


@njit(cache=True, parallel=True)
def _interp_3d(x, y, z, grid, ns, beta, out, bounds):
    nk = grid.shape[0]
    nf0 = grid.shape[1]
    nf1 = grid.shape[2]
    nf2 = grid.shape[3]
    for ch in prange(bounds.shape[0] - 1):
        kx = np.empty(ns)
        ky = np.empty(ns)
        kz = np.empty(ns)
        for j in range(bounds[ch], bounds[ch + 1]):
            i0 = _window(x[j], ns, beta, kx)
            j0 = _window(y[j], ns, beta, ky)
            l0 = _window(z[j], ns, beta, kz)
            for t in range(nk):
                acc = 0j
                for p in range(ns):
                    ix = _wrap(i0 + p, nf0)
                    for q in range(ns):
                        iy = _wrap(j0 + q, nf1)
                        col = 0j
                        for r in range(ns):
                            col += kz[r] * grid[t, ix, iy, _wrap(l0 + r, nf2)]
                        acc += kx[p] * ky[q] * col
                out[j, t] = acc


def interp_1d(x, grid, ns, beta, out):
    _interp_1d(x, grid, ns, beta, out, _chunk_bounds(x.shape[0]))


def interp_2d(x, y, grid, ns, beta, out):
    _interp_2d(x, y, grid, ns, beta, out, _chunk_bounds(x.shape[0]))


def interp_3d(x, y, z, grid, ns, beta, out):
    _interp_3d(x, y, z, grid, ns, beta, out, _chunk_bounds(x.shape[0]))
