"""Preconditioned conjugate gradients for Hermitian positive-definite systems."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .toeplitz import DiagonalOperator, LinearOperatorExpr

_MAX_RESTARTS = 4

__all__ = ["CgConfig", "SolveReport", "conjugate_gradient", "jacobi_preconditioner"]


@dataclass(frozen=True)
class CgConfig:
    """Stopping rule for :func:`conjugate_gradient`.

    ``maxiter=None`` means ``max(1000, 10 * dim)``.  ``preconditioner`` is an
    approximate inverse of the system matrix and must be Hermitian positive
    definite.
    """

    tol: float = 1e-8
    maxiter: Optional[int] = None
    preconditioner: Optional[LinearOperatorExpr] = None

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError(f"CG tolerance must lie in (0, 1), got {self.tol}")
        if self.maxiter is not None and self.maxiter < 1:
            raise ValueError(f"maxiter must be >= 1, got {self.maxiter}")


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool

    def to_dict(self) -> dict:
        return asdict(self)


def jacobi_preconditioner(diagonal_estimate) -> DiagonalOperator:
    """Inverse of a positive diagonal estimate, as a diagonal operator."""
    diag = np.asarray(diagonal_estimate)
    if np.iscomplexobj(diag):
        if np.any(np.abs(diag.imag) > 1e-12 * np.abs(diag.real)):
            raise ValueError("Jacobi preconditioner needs a real diagonal")
        diag = diag.real
    if not np.all(diag > 0):
        raise ValueError("Jacobi preconditioner needs a strictly positive diagonal")
    return DiagonalOperator(1.0 / diag)


def conjugate_gradient(
    A: LinearOperatorExpr,
    b,
    cfg: CgConfig | None = None,
    x0=None,
    callback: Callable[[np.ndarray], None] | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Solve ``A x = b`` for Hermitian positive-definite ``A``.

    Inner products are ``<u, v> = sum conj(u_i) v_i``.  Iteration stops once the
    recursively updated residual satisfies ``|r| <= tol |b|``; the reported
    residual is recomputed from ``b - A x``.  Non-convergence is reported, not
    raised, and the last iterate is returned.

    ``callback(x)`` is called after every iteration with the current iterate.
    """
    cfg = cfg or CgConfig()
    b = np.asarray(b, dtype=complex)
    if b.shape != (A.dim,):
        raise ValueError(f"right-hand side of shape {b.shape} does not match operator dimension {A.dim}")
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side contains non-finite values")
    maxiter = cfg.maxiter if cfg.maxiter is not None else max(1000, 10 * A.dim)
    M = cfg.preconditioner
    precond = (lambda r: r) if M is None else M.apply

    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(A.dim, dtype=complex), SolveReport(0, 0.0, True)
    x = np.zeros(A.dim, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    threshold = cfg.tol * bnorm
    it = 0
    # the recursive residual can drift from b - Ax; restart from the true one
    for _ in range(_MAX_RESTARTS):
        r = b - A.apply(x) if (x0 is not None or it) else b.copy()
        if np.linalg.norm(r) <= threshold or it >= maxiter:
            break
        z = precond(r)
        p = z.copy()
        rz = np.vdot(r, z).real
        while it < maxiter:
            Ap = A.apply(p)
            pAp = np.vdot(p, Ap).real
            if pAp <= 0:
                break
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            if callback is not None:
                callback(x)
            if np.linalg.norm(r) <= threshold:
                break
            z = precond(r)
            rz_new = np.vdot(r, z).real
            p = z + (rz_new / rz) * p
            rz = rz_new
        else:
            break
        if pAp <= 0:
            break

    residual = float(np.linalg.norm(b - A.apply(x)) / bnorm)
    return x, SolveReport(it, residual, bool(residual <= cfg.tol))
