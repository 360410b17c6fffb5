"""Fitting procedures, prediction, the dense reference solver and lambda
grid search.

Every estimator solves normal equations of the form ::

    (Sigma + lam * diag(reg) + penalty) theta = v

where ``Sigma = Phi^* Phi / n`` and ``v = Phi^* Y / n`` come from NUFFTs of the
data, ``reg`` is the diagonal of ``M^* M`` and ``penalty`` is the optional
physics term.  :func:`assemble` builds these pieces once; the ``fit_*``
functions then run a single preconditioned CG solve, and
:func:`grid_search_lambda` reuses the same pieces for many values of ``lam``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .fourier_grid import (
    BoxDomain,
    DiffOperatorSpec,
    MultiIndexGrid,
    box_fourier_generating,
    diff_op_diagonal,
    feature_map,
    sobolev_diagonal,
)
from .model import FittedModel, SampleSet
from .nufft import NufftPlan, scale_points
from .solvers import CgConfig, SolveReport, conjugate_gradient, jacobi_preconditioner
from .toeplitz import (
    BlockOperator,
    DiagonalOperator,
    LinearOperatorExpr,
    SandwichOperator,
    ToeplitzOperator,
    build_empirical_covariance,
    empirical_moments,
)
from .validation import check_in_domain, check_points, check_positive

__all__ = [
    "NormalEquations",
    "assemble",
    "rhs_vector",
    "fit",
    "fit_sobolev",
    "fit_lowbias",
    "fit_pik_box",
    "fit_pik_collocation",
    "fit_additive",
    "predict",
    "fit_dense_oracle",
    "GridSearchResult",
    "grid_search_lambda",
    "split_samples",
]

DEFAULT_EPS = 1e-10
PREDICT_EPS = 1e-12
IMAG_TOL = 1e-6
DENSE_MAX_DIM = 2000
DENSE_MAX_N = 5000
_DENSE_BLOCK_DIM = 512


def _hermitian_part(g: np.ndarray) -> np.ndarray:
    return 0.5 * (g + np.conj(g[(slice(None, None, -1),) * g.ndim]))


def _check_hyper(kind: str, d: int, s: float, m: int, mu=None) -> None:
    if int(m) != m or m < 1:
        raise ValueError(f"m must be an integer >= 1, got {m}")
    if kind == "additive":
        if not s > 0.5:
            raise ValueError(f"additive models need s > 1/2, got s={s}")
    elif not s > d / 2:
        raise ValueError(f"need s > d/2 = {d / 2}, got s={s}")
    if kind != "additive" and d > 3:
        raise ValueError(f"{kind} estimator supports d <= 3 (got d={d}); use the additive model")
    if mu is not None:
        check_positive("mu", mu, allow_zero=True)


def derivative_multipliers(grid: MultiIndexGrid, op: DiffOperatorSpec, L: float) -> np.ndarray:
    """Multiplier applied by ``op`` to each coefficient of ``sum_k theta_k exp(+i pi <k,x>/2L)``."""
    return np.conj(diff_op_diagonal(grid, op, L))


@dataclass
class NormalEquations:
    """Data-dependent pieces of one estimator's linear system."""

    kind: str
    d: int
    m: int
    L: float
    s: float
    gram: LinearOperatorExpr
    rhs: np.ndarray
    reg: np.ndarray
    penalty: Optional[LinearOperatorExpr] = None
    mu: Optional[float] = None
    op: Optional[DiffOperatorSpec] = None
    box: Optional[BoxDomain] = None
    info: dict = field(default_factory=dict)

    def operator(self, lam: float) -> LinearOperatorExpr:
        A = self.gram + DiagonalOperator(lam * self.reg)
        if self.penalty is not None:
            A = A + self.penalty
        return A

    def solve(self, lam: float, cg: CgConfig | None = None, x0=None) -> tuple[np.ndarray, SolveReport]:
        lam = check_positive("lambda", lam)
        cg = cg or CgConfig()
        A = self.operator(lam)
        if cg.preconditioner is None:
            cg = CgConfig(cg.tol, cg.maxiter, jacobi_preconditioner(A.diagonal().real))
        return conjugate_gradient(A, self.rhs, cg, x0=x0)

    def model(self, theta, lam: float, report: SolveReport | None) -> FittedModel:
        return FittedModel(
            kind=self.kind,
            theta=theta,
            d=self.d,
            m=self.m,
            L=self.L,
            s=self.s,
            lam=float(lam),
            mu=self.mu,
            op=self.op,
            box=self.box,
            report=report,
            info=dict(self.info),
        )

    def objective_quadratic(self, theta) -> float:
        """``theta^* gram theta - 2 Re(theta^* rhs)``; the data-fit term minus ``mean(Y^2)``."""
        return float(np.vdot(theta, self.gram.apply(theta)).real - 2.0 * np.vdot(theta, self.rhs).real)


def _additive_gram(X: np.ndarray, y, L: float, m: int, eps: float):
    n, d = X.shape
    side = 2 * m + 1
    t = scale_points(X, L)
    diag_ops, rhs = [], []
    for ell in range(d):
        g, v = empirical_moments(X[:, ell], L, m, y, eps=eps)
        diag_ops.append(ToeplitzOperator(_hermitian_part(g), hermitian=True, psd=True))
        rhs.append(v)
    blocks = [[None] * d for _ in range(d)]
    for ell in range(d):
        blocks[ell][ell] = diag_ops[ell]
    if d > 1:
        plan = NufftPlan((side, side), eps)
        w = np.full(n, 1.0 / n)
        for a in range(d):
            for b in range(a + 1, d):
                # 2-D transform at (t_a, -t_b) gives conj of the (a, b) block
                F = plan.type1(np.stack([t[:, a], -t[:, b]], axis=1), w)
                B = np.conj(F)
                blocks[a][b] = B
                blocks[b][a] = B.conj().T
    op = BlockOperator(blocks, hermitian=True, psd=True)
    if op.dim <= _DENSE_BLOCK_DIM:
        dense = op.to_dense()
        op = _DenseBlockGram(op, 0.5 * (dense + dense.conj().T))
    return op, np.concatenate(rhs)


class _DenseBlockGram(LinearOperatorExpr):
    # small additive systems: keep the block structure but apply one dense product
    hermitian = True
    psd = True

    def __init__(self, blocks: BlockOperator, dense: np.ndarray):
        self.blocks = blocks
        self.matrix = dense
        self.dim = blocks.dim

    def apply(self, v):
        return self.matrix @ self._check(v)

    def diagonal(self):
        return self.blocks.diagonal()


def assemble(
    samples: SampleSet,
    kind: str,
    s: float,
    m: int,
    *,
    mu: float | None = None,
    op: DiffOperatorSpec | None = None,
    box: BoxDomain | None = None,
    collocation=None,
    eps: float = DEFAULT_EPS,
) -> NormalEquations:
    """Build the gram operator, right-hand side and regularizers for ``kind``."""
    d, L = samples.d, samples.L
    m = int(m)
    _check_hyper(kind, d, s, m, mu)
    if kind == "additive":
        gram, rhs = _additive_gram(samples.X, samples.Y, L, m, eps)
        return NormalEquations(kind, d, m, L, s, gram, rhs, np.ones(gram.dim))

    grid = MultiIndexGrid(d, m)
    g, v = empirical_moments(samples.X, L, m, samples.Y, eps=eps)
    gram = ToeplitzOperator(_hermitian_part(g), hermitian=True, psd=True)
    if kind == "lowbias":
        return NormalEquations(kind, d, m, L, s, gram, v, np.ones(grid.size))
    reg = sobolev_diagonal(grid, s) ** 2
    if kind == "sobolev":
        return NormalEquations(kind, d, m, L, s, gram, v, reg)

    if kind not in ("pik_box", "pik_collocation"):
        raise ValueError(f"unknown estimator kind {kind!r}")
    if op is None:
        raise ValueError(f"{kind} needs a differential operator")
    if op.d != d:
        raise ValueError(f"operator dimension {op.d} does not match data dimension {d}")
    mu = 0.0 if mu is None else float(mu)
    info = {}
    if kind == "pik_box":
        if box is None:
            raise ValueError("pik_box needs a box domain")
        if box.d != d or not np.isclose(box.L, L, rtol=1e-12, atol=0):
            raise ValueError(f"box (d={box.d}, L={box.L}) is inconsistent with the samples (d={d}, L={L})")
        pen = ToeplitzOperator(box_fourier_generating(d, m, box), hermitian=True, psd=True)
    else:
        colloc = check_points(collocation, d)
        if colloc.shape[0] < 1:
            raise ValueError("need at least one collocation point")
        check_in_domain(colloc, L)
        pen = build_empirical_covariance(colloc, m, L=L, eps=eps)
        info["n_collocation"] = int(colloc.shape[0])
    penalty = None
    if mu > 0:
        penalty = mu * SandwichOperator(derivative_multipliers(grid, op, L), pen)
    return NormalEquations(kind, d, m, L, s, gram, v, reg, penalty, mu, op, box if kind == "pik_box" else None, info)


def rhs_vector(samples: SampleSet, m: int, eps: float = DEFAULT_EPS) -> np.ndarray:
    """``v = Phi^* Y / n``, flattened over ``{-m..m}^d``."""
    t = scale_points(samples.X, samples.L)
    plan = NufftPlan((2 * m + 1,) * samples.d, eps)
    F = plan.type1(t, samples.Y / samples.n)
    return np.ascontiguousarray(F[(slice(None, None, -1),) * samples.d]).reshape(-1)


def fit(samples: SampleSet, kind: str, s: float, lam: float, m: int, *, cg: CgConfig | None = None,
        eps: float = DEFAULT_EPS, **kwargs) -> FittedModel:
    """Assemble and solve for one estimator kind."""
    lam = check_positive("lambda", lam)
    eq = assemble(samples, kind, s, m, eps=eps, **kwargs)
    theta, report = eq.solve(lam, cg)
    return eq.model(theta, lam, report)


def fit_sobolev(samples, s, lam, m, *, cg=None, eps=DEFAULT_EPS) -> FittedModel:
    """Sobolev ridge: ``(Sigma + lam S^2) theta = v``."""
    return fit(samples, "sobolev", s, lam, m, cg=cg, eps=eps)


def fit_lowbias(samples, s, lam, m, *, cg=None, eps=DEFAULT_EPS) -> FittedModel:
    """Low-bias ridge: ``(Sigma + lam I) theta = v``; ``s`` enters only via schedules."""
    return fit(samples, "lowbias", s, lam, m, cg=cg, eps=eps)


def fit_pik_box(samples, s, lam, mu, op, box, m, *, cg=None, eps=DEFAULT_EPS) -> FittedModel:
    """Sobolev ridge plus ``mu (4L)^-d int_box |D f|^2`` on an axis-aligned box."""
    return fit(samples, "pik_box", s, lam, m, cg=cg, eps=eps, mu=mu, op=op, box=box)


def fit_pik_collocation(samples, collocation, s, lam, mu, op, m, *, cg=None, eps=DEFAULT_EPS) -> FittedModel:
    """Sobolev ridge plus ``mu mean_r |D f(x_r)|^2`` over collocation points."""
    return fit(samples, "pik_collocation", s, lam, m, cg=cg, eps=eps, mu=mu, op=op, collocation=collocation)


def fit_additive(samples, s, lam, m, *, cg=None, eps=DEFAULT_EPS) -> FittedModel:
    """Low-bias additive model ``f(x) = sum_l g_l(x_l)`` with one 1-D block per feature."""
    return fit(samples, "additive", s, lam, m, cg=cg, eps=eps)


def predict(model: FittedModel, X, eps: float = PREDICT_EPS) -> np.ndarray:
    """Evaluate ``sum_k theta_k exp(i pi <k, x> / 2L)`` and return the real part."""
    X = check_points(X, model.d)
    check_in_domain(X, model.L)
    t = scale_points(X, model.L)
    side = 2 * model.m + 1
    if model.kind == "additive":
        plan = NufftPlan(side, eps)
        f = np.zeros(X.shape[0], dtype=complex)
        for ell, block in enumerate(model.blocks()):
            f += plan.type2(t[:, ell], block)
    else:
        plan = NufftPlan((side,) * model.d, eps)
        f = plan.type2(t, model.blocks()[0])
    re, im = f.real, f.imag
    if np.linalg.norm(im) > IMAG_TOL * np.linalg.norm(re):
        warnings.warn(
            f"prediction has a relative imaginary part of {np.linalg.norm(im) / max(np.linalg.norm(re), 1e-300):.2e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return re


# -- dense reference ----------------------------------------------------------

def _dense_design(X: np.ndarray, grid: MultiIndexGrid, L: float) -> np.ndarray:
    # rows are phi(X_j)^*; built one point at a time on purpose
    return np.stack([np.conj(feature_map(x, grid, L)) for x in X])


def _basis_derivative_factor(grid: MultiIndexGrid, op: DiffOperatorSpec, L: float) -> np.ndarray:
    # d^alpha exp(i c <k,x>) = prod_l (i c k_l)^alpha_l exp(i c <k,x>),  c = pi / 2L
    c = np.pi / (2.0 * L)
    k = grid.indices()
    out = np.zeros(grid.size, dtype=complex)
    for alpha, coef in op.terms:
        term = np.full(grid.size, coef, dtype=complex)
        for ell, a in enumerate(alpha):
            for _ in range(a):
                term *= 1j * c * k[:, ell]
        out += term
    return out


def _box_penalty_quadrature(grid: MultiIndexGrid, op: DiffOperatorSpec, box: BoxDomain, nodes: int = 64) -> np.ndarray:
    z, w = np.polynomial.legendre.leggauss(nodes)
    axes, weights = [], []
    for a, b in zip(box.lower, box.upper):
        axes.append(0.5 * (b - a) * z + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.d)
    wts = np.ones(1)
    for wl in weights:
        wts = np.multiply.outer(wts, wl)
    wts = wts.reshape(-1)
    Psi = np.conj(feature_map(pts, grid, box.L)) * _basis_derivative_factor(grid, op, box.L)
    return (Psi.conj().T * wts) @ Psi / (4.0 * box.L) ** grid.d


def fit_dense_oracle(
    samples: SampleSet,
    kind: str,
    s: float,
    lam: float,
    m: int,
    *,
    mu: float | None = None,
    op: DiffOperatorSpec | None = None,
    box: BoxDomain | None = None,
    collocation=None,
) -> FittedModel:
    """Reference solution by explicit feature matrices and a direct solve.

    Only for ``(2m+1)^d <= 2000`` (``d (2m+1)`` for additive) and ``n <= 5000``.
    ``lam = 0`` is accepted and gives plain least squares when the gram is
    nonsingular.
    """
    d, L, n = samples.d, samples.L, samples.n
    if n > DENSE_MAX_N:
        raise ValueError(f"dense oracle is capped at n <= {DENSE_MAX_N}, got {n}")
    lam = check_positive("lambda", lam, allow_zero=True)
    if kind == "additive":
        grid = MultiIndexGrid(1, m)
        dim = d * grid.size
        if dim > DENSE_MAX_DIM:
            raise ValueError(f"dense oracle is capped at dimension {DENSE_MAX_DIM}, got {dim}")
        Phi = np.hstack([_dense_design(samples.X[:, [ell]], grid, L) for ell in range(d)])
        reg = np.ones(dim)
    else:
        grid = MultiIndexGrid(d, m)
        if grid.size > DENSE_MAX_DIM:
            raise ValueError(f"dense oracle is capped at dimension {DENSE_MAX_DIM}, got {grid.size}")
        Phi = _dense_design(samples.X, grid, L)
        reg = np.ones(grid.size) if kind == "lowbias" else sobolev_diagonal(grid, s) ** 2
    A = Phi.conj().T @ Phi / n + lam * np.diag(reg)
    b = Phi.conj().T @ samples.Y / n
    info = {}
    if kind in ("pik_box", "pik_collocation") and mu:
        if kind == "pik_box":
            P = _box_penalty_quadrature(grid, op, box)
        else:
            colloc = check_points(collocation, d)
            Psi = _dense_design(colloc, grid, L) * _basis_derivative_factor(grid, op, L)
            P = Psi.conj().T @ Psi / colloc.shape[0]
            info["n_collocation"] = int(colloc.shape[0])
        A = A + mu * P
    elif kind == "pik_collocation" and collocation is not None:
        info["n_collocation"] = int(np.shape(collocation)[0])
    theta = scipy.linalg.solve(A, b, assume_a="her")
    return FittedModel(
        kind=kind, theta=theta, d=d, m=m, L=L, s=s, lam=lam,
        mu=mu if kind.startswith("pik") else None,
        op=op if kind.startswith("pik") else None,
        box=box if kind == "pik_box" else None,
        report=SolveReport(0, float(np.linalg.norm(A @ theta - b) / max(np.linalg.norm(b), 1e-300)), True),
        info=info,
    )


# -- grid search ----------------------------------------------------------------

@dataclass
class GridSearchResult:
    best_lambda: float
    table: list  # (lambda, validation MSE) in grid order
    model: FittedModel
    thetas: np.ndarray  # one row per grid value, grid order
    reports: list
    train_index: np.ndarray
    val_index: np.ndarray
    timings: dict


def split_samples(samples: SampleSet, val_frac: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Random holdout split; returns sorted ``(train_index, val_index)``."""
    if not 0 < val_frac < 1:
        raise ValueError(f"val_frac must lie in (0, 1), got {val_frac}")
    n = samples.n
    n_val = int(round(val_frac * n))
    if n_val < 1 or n_val >= n:
        raise ValueError(f"holdout fraction {val_frac} leaves an empty split for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def grid_search_lambda(
    samples: SampleSet,
    lambdas: Sequence[float],
    kind: str,
    s: float,
    m: int,
    *,
    val_frac: float = 0.2,
    seed: int = 0,
    cg: CgConfig | None = None,
    eps: float = DEFAULT_EPS,
    **kwargs,
) -> GridSearchResult:
    """Holdout search over ``lambdas`` with one NUFFT assembly for all of them.

    Validation error is evaluated exactly from the validation gram and
    cross-moments, ``mean((Phi_v theta - Y_v)^2) = theta^* G_v theta -
    2 Re(theta^* v_v) + mean(Y_v^2)``, so no per-lambda prediction pass is
    needed.  Solves are warm-started from the previous lambda, visited from
    largest to smallest.  Ties go to the larger lambda.
    """
    import time

    lambdas = np.asarray([check_positive("lambda", lam) for lam in np.atleast_1d(lambdas)], dtype=float)
    if lambdas.size == 0:
        raise ValueError("lambda grid is empty")
    t0 = time.perf_counter()
    train_idx, val_idx = split_samples(samples, val_frac, seed)
    train, val = samples.subset(train_idx), samples.subset(val_idx)
    eq = assemble(train, kind, s, m, eps=eps, **kwargs)
    # only the gram and cross-moments of the validation split are needed
    veq = assemble(val, "sobolev" if kind.startswith("pik") else kind, s, m, eps=eps)
    y2 = float(np.mean(val.Y**2))
    t1 = time.perf_counter()

    order = np.argsort(-lambdas, kind="stable")
    thetas = np.zeros((lambdas.size, eq.rhs.size), dtype=complex)
    reports = [None] * lambdas.size
    mse = np.empty(lambdas.size)
    x0 = None
    for i in order:
        theta, rep = eq.solve(lambdas[i], cg, x0=x0)
        thetas[i], reports[i] = theta, rep
        mse[i] = veq.objective_quadratic(theta) + y2
        x0 = theta
    t2 = time.perf_counter()

    best_val = mse.min()
    ties = np.flatnonzero(mse <= best_val + 1e-12 * max(abs(best_val), 1e-300))
    best = ties[np.argmax(lambdas[ties])]
    model = eq.model(thetas[best], lambdas[best], reports[best])
    return GridSearchResult(
        best_lambda=float(lambdas[best]),
        table=[(float(lam), float(e)) for lam, e in zip(lambdas, mse)],
        model=model,
        thetas=thetas,
        reports=reports,
        train_index=train_idx,
        val_index=val_idx,
        timings={"assemble_seconds": t1 - t0, "solve_seconds": t2 - t1,
                 "per_lambda_seconds": (t2 - t1) / lambdas.size, "total_seconds": t2 - t0},
    )
