"""scikit-learn compatible regressors wrapping :mod:`fastkern.fitting`."""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .fitting import DEFAULT_EPS, PREDICT_EPS, fit, predict
from .fourier_grid import BoxDomain, DiffOperatorSpec, schedule_hyperparams
from .model import SampleSet
from .solvers import CgConfig
from .validation import check_inputs, check_points

__all__ = ["SobolevRegressor", "LowBiasRegressor", "PhysicsInformedRegressor", "AdditiveRegressor"]


class _FourierRegressor(RegressorMixin, BaseEstimator):
    _kind = ""

    def __init__(self, s=2.0, lam="auto", m="auto", L="auto", eps=DEFAULT_EPS, cg_tol=1e-8, cg_maxiter=None):
        self.s = s
        self.lam = lam
        self.m = m
        self.L = L
        self.eps = eps
        self.cg_tol = cg_tol
        self.cg_maxiter = cg_maxiter

    def _kind_for_fit(self) -> str:
        return self._kind

    def _extra(self, samples: SampleSet) -> dict:
        return {}

    def fit(self, X, y):
        X, y = check_inputs(X, y)
        samples = SampleSet.from_arrays(X, y, None if _is_auto(self.L) else self.L)
        kind = self._kind_for_fit()
        m_auto, lam_auto = schedule_hyperparams(samples.n, self.s, samples.d, kind)
        m = m_auto if _is_auto(self.m) else int(self.m)
        lam = lam_auto if _is_auto(self.lam) else float(self.lam)
        cg = CgConfig(tol=self.cg_tol, maxiter=self.cg_maxiter)
        self.model_ = fit(samples, kind, self.s, lam, m, cg=cg, eps=self.eps, **self._extra(samples))
        if not self.model_.report.converged:
            warnings.warn(
                f"CG stopped after {self.model_.report.iterations} iterations with relative residual "
                f"{self.model_.report.residual:.2e} > {self.cg_tol:.1e}",
                ConvergenceWarning,
                stacklevel=2,
            )
        self.n_features_in_ = samples.d
        self.m_ = m
        self.lam_ = lam
        self.L_ = samples.L
        self.coef_ = self.model_.theta
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_points(X, self.n_features_in_)
        return predict(self.model_, X, eps=PREDICT_EPS)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.allow_nan = False
        return tags


def _is_auto(value) -> bool:
    return value is None or (isinstance(value, str) and value == "auto")


class SobolevRegressor(_FourierRegressor):
    """Ridge regression penalized by the Sobolev ``H^s`` norm of the truncated series.

    ``lam``, ``m`` and ``L`` default to ``"auto"``: the rate-optimal schedule in
    ``n`` and the smallest half-period covering the data.
    """

    _kind = "sobolev"


class LowBiasRegressor(_FourierRegressor):
    """Ridge regression with an identity penalty; smoothness acts only through ``m``."""

    _kind = "lowbias"


class AdditiveRegressor(_FourierRegressor):
    """Additive model ``f(x) = sum_l g_l(x_l)``; scales to any input dimension."""

    _kind = "additive"


class PhysicsInformedRegressor(_FourierRegressor):
    """Sobolev ridge plus ``mu`` times a differential-operator penalty.

    Give either ``box`` (a sequence of ``(a, b)`` bounds, a ``"a,b;c,d"``
    string or a :class:`BoxDomain`) for an integrated penalty, or
    ``collocation`` points for an averaged one.  ``operator`` is a
    :class:`DiffOperatorSpec` or its text form, e.g. ``"1:1,-1:0"`` for
    ``f' - f``.
    """

    def __init__(self, operator=None, mu=1.0, box=None, collocation=None, s=2.0, lam="auto", m="auto", L="auto",
                 eps=DEFAULT_EPS, cg_tol=1e-8, cg_maxiter=None):
        super().__init__(s=s, lam=lam, m=m, L=L, eps=eps, cg_tol=cg_tol, cg_maxiter=cg_maxiter)
        self.operator = operator
        self.mu = mu
        self.box = box
        self.collocation = collocation

    def _kind_for_fit(self) -> str:
        if (self.box is None) == (self.collocation is None):
            raise ValueError("give exactly one of box or collocation")
        return "pik_box" if self.box is not None else "pik_collocation"

    def _extra(self, samples: SampleSet) -> dict:
        if self.operator is None:
            raise ValueError("operator is required")
        op = self.operator if isinstance(self.operator, DiffOperatorSpec) else DiffOperatorSpec.parse(self.operator)
        extra = {"op": op, "mu": self.mu}
        if self.box is not None:
            extra["box"] = _as_box(self.box, samples.L)
        else:
            extra["collocation"] = self.collocation
        return extra


def _as_box(box, L: float) -> BoxDomain:
    if isinstance(box, BoxDomain):
        return box if np.isclose(box.L, L) else BoxDomain(box.lower, box.upper, L)
    if isinstance(box, str):
        return BoxDomain.parse(box, L)
    bounds = np.asarray(box, dtype=float).reshape(-1, 2)
    return BoxDomain(bounds[:, 0], bounds[:, 1], L)
