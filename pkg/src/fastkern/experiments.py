"""Synthetic scenarios, the test-MSE harness and log-log rate fitting."""
from __future__ import annotations

import csv
import io
import math
import os
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .fitting import DEFAULT_EPS, fit, predict
from .fourier_grid import BoxDomain, DiffOperatorSpec, schedule_hyperparams
from .model import FittedModel, SampleSet, atomic_write_text
from .solvers import CgConfig

__all__ = [
    "Scenario",
    "SCENARIOS",
    "ESTIMATOR_NAMES",
    "ExperimentConfig",
    "ResultRow",
    "generate",
    "test_mse",
    "run_rate_experiment",
    "fit_log_slope",
    "summarize",
    "theoretical_slope",
    "rows_to_csv",
    "write_rows_csv",
    "read_rows_csv",
    "CSV_HEADER",
]

CSV_HEADER = ["scenario", "estimator", "n", "s", "lambda", "m", "mse", "fit_seconds", "cg_iters", "resample"]
TIMING_COLUMNS = ("fit_seconds",)

# estimator names as used on the command line and in result files
ESTIMATOR_NAMES = {
    "sobolev": "sobolev",
    "lowbias": "lowbias",
    "pik-box": "pik_box",
    "pik-colloc": "pik_collocation",
    "additive": "additive",
}
_TEST_STREAM = 0  # spawn key reserved for the test set; training keys start at n >= 1


@dataclass(frozen=True)
class Scenario:
    name: str
    d: int
    f_star: Callable[[np.ndarray], np.ndarray]
    L: float = 1.0
    operator: Optional[str] = None  # prior-knowledge constraint, "a:alpha" syntax

    @property
    def box(self) -> BoxDomain:
        return BoxDomain([0.0] * self.d, [1.0] * self.d, self.L)


def _additive5(X):
    ell = np.arange(1, 6)
    return np.sum(np.exp(X / (ell + 1)) - 1.0, axis=1)


SCENARIOS = {
    "sobolev1d": Scenario("sobolev1d", 1, lambda X: np.exp(X[:, 0])),
    "cubic1d": Scenario("cubic1d", 1, lambda X: 25.0 * np.abs(X[:, 0] - 0.5) ** 3),
    "smooth2d": Scenario("smooth2d", 2, lambda X: np.exp(X[:, 0]) * np.cos(X[:, 1])),
    "pik1d": Scenario("pik1d", 1, lambda X: np.exp(X[:, 0]), L=math.pi / 2, operator="1:1,-1:0"),
    "additive5d": Scenario("additive5d", 5, _additive5),
}


def _scenario(name) -> Scenario:
    if isinstance(name, Scenario):
        return name
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate(scenario, n: int, seed) -> tuple[SampleSet, Callable[[np.ndarray], np.ndarray]]:
    """``n`` draws with ``X`` uniform on ``(0, 1)^d`` and ``Y = f*(X) + N(0, 1)``.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts.
    """
    sc = _scenario(scenario)
    n = int(n)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = _rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, sc.d))
    Y = sc.f_star(X) + rng.standard_normal(n)
    return SampleSet(X, Y, sc.L), sc.f_star


def _test_points(sc: Scenario, n_test: int, seed) -> np.ndarray:
    return _rng(seed).uniform(0.0, 1.0, size=(int(n_test), sc.d))


def test_mse(model, scenario, n_test: int = 10_000, seed=0) -> float:
    """Mean squared distance to the noiseless ``f*`` over fresh uniform points.

    ``model`` is a :class:`FittedModel`, a fitted estimator or any callable
    mapping an ``(n, d)`` array to predictions.
    """
    sc = _scenario(scenario)
    X = _test_points(sc, n_test, seed)
    return _mse_on(model, sc, X)


test_mse.__test__ = False  # not a pytest test


def _mse_on(model, sc: Scenario, X: np.ndarray) -> float:
    if isinstance(model, FittedModel):
        if model.d != sc.d:
            raise ValueError(f"model has d={model.d}, scenario {sc.name} has d={sc.d}")
        yhat = predict(model, X)
    elif hasattr(model, "predict"):
        yhat = model.predict(X)
    else:
        yhat = model(X)
    return float(np.mean((np.asarray(yhat) - sc.f_star(X)) ** 2))


def theoretical_slope(s: float, d: int, estimator: str) -> float:
    dim = 1 if ESTIMATOR_NAMES.get(estimator, estimator) == "additive" else d
    return -2.0 * s / (2.0 * s + dim)


@dataclass
class ResultRow:
    scenario: str
    estimator: str
    n: int
    s: float
    lam: float
    m: int
    mse: float
    fit_seconds: float
    cg_iters: int
    resample: int
    converged: bool = True
    error: str = ""

    def as_csv_fields(self) -> list[str]:
        return [
            self.scenario,
            self.estimator,
            str(self.n),
            _g(self.s),
            _g(self.lam),
            str(self.m),
            _g(self.mse),
            _g(self.fit_seconds),
            str(self.cg_iters),
            str(self.resample),
        ]


def _g(x: float) -> str:
    return f"{x:.10g}"


@dataclass
class ExperimentConfig:
    """One sweep: every ``(n, resample, estimator, s)`` cell is fit once.

    ``lam``/``m`` are ``"auto"`` for the rate-optimal schedules or a fixed
    value.  Resample ``r`` at size ``n`` draws from the stream
    ``SeedSequence(seed, spawn_key=(n, r))``; the test set comes from a
    separate stream of the same seed and is shared by all cells.
    """

    scenario: str
    n_grid: Sequence[int]
    s_grid: Sequence[float] = (1.0,)
    estimators: Sequence[str] = ("sobolev",)
    resamples: int = 1
    seed: int = 0
    n_test: int = 10_000
    lam: object = "auto"
    m: object = "auto"
    mu: float = 1.0
    n_collocation: int = 1000
    eps: float = DEFAULT_EPS
    cg_tol: float = 1e-8
    output: Optional[str] = None

    def __post_init__(self):
        _scenario(self.scenario)
        self.n_grid = [int(n) for n in self.n_grid]
        self.s_grid = [float(s) for s in self.s_grid]
        self.estimators = list(self.estimators)
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ValueError(f"n grid must be nonempty with all n >= 1, got {self.n_grid}")
        if not self.s_grid:
            raise ValueError("s grid is empty")
        if int(self.resamples) < 1:
            raise ValueError(f"resamples must be >= 1, got {self.resamples}")
        if int(self.n_test) < 1:
            raise ValueError(f"n_test must be >= 1, got {self.n_test}")
        for e in self.estimators:
            if e not in ESTIMATOR_NAMES:
                raise ValueError(f"unknown estimator {e!r}; choose from {', '.join(ESTIMATOR_NAMES)}")


def _estimator_kwargs(name: str, sc: Scenario, cfg: ExperimentConfig, rng) -> dict:
    kind = ESTIMATOR_NAMES[name]
    if kind not in ("pik_box", "pik_collocation"):
        return {}
    if sc.operator is None:
        raise ValueError(f"scenario {sc.name} has no differential constraint for {name}")
    extra = {"op": DiffOperatorSpec.parse(sc.operator, sc.d), "mu": cfg.mu}
    if kind == "pik_box":
        extra["box"] = sc.box
    else:
        extra["collocation"] = rng.uniform(0.0, 1.0, size=(cfg.n_collocation, sc.d))
    return extra


def run_rate_experiment(config: ExperimentConfig, on_row: Callable[[ResultRow], None] | None = None) -> list[ResultRow]:
    """Generate, fit, time and score every cell of ``config``.

    Rows are passed to ``on_row`` as soon as they exist, and a failing fit
    yields a row with ``mse = nan`` and ``converged = False`` instead of
    aborting the sweep.  Returned rows are sorted by
    ``(estimator, s, n, resample)``.
    """
    cfg = config
    sc = _scenario(cfg.scenario)
    X_test = _test_points(sc, cfg.n_test, np.random.SeedSequence(cfg.seed, spawn_key=(_TEST_STREAM,)))
    cg = CgConfig(tol=cfg.cg_tol)
    rows = []
    for n in cfg.n_grid:
        for r in range(int(cfg.resamples)):
            ss = np.random.SeedSequence(cfg.seed, spawn_key=(n, r))
            data_seed, colloc_seed = ss.spawn(2)
            samples, _ = generate(sc, n, data_seed)
            for name in cfg.estimators:
                kind = ESTIMATOR_NAMES[name]
                for s in cfg.s_grid:
                    row = _run_cell(sc, cfg, samples, name, kind, s, r, cg, X_test, np.random.default_rng(colloc_seed))
                    rows.append(row)
                    if on_row is not None:
                        on_row(row)
    rows.sort(key=lambda row: (row.estimator, row.s, row.n, row.resample))
    return rows


def _run_cell(sc, cfg, samples, name, kind, s, r, cg, X_test, rng) -> ResultRow:
    n = samples.n
    lam, m = float("nan"), 0
    try:
        m_auto, lam_auto = schedule_hyperparams(n, s, sc.d, kind)
        m = m_auto if cfg.m == "auto" else int(cfg.m)
        lam = lam_auto if cfg.lam == "auto" else float(cfg.lam)
        extra = _estimator_kwargs(name, sc, cfg, rng)
        t0 = time.perf_counter()
        model = fit(samples, kind, s, lam, m, cg=cg, eps=cfg.eps, **extra)
        seconds = time.perf_counter() - t0
        mse = _mse_on(model, sc, X_test)
        return ResultRow(sc.name, name, n, s, lam, m, mse, seconds, model.report.iterations, r,
                         converged=model.report.converged)
    except (ValueError, ArithmeticError, MemoryError) as exc:
        return ResultRow(sc.name, name, n, s, lam, m, float("nan"), float("nan"), 0, r, converged=False, error=str(exc))


def summarize(rows: Iterable[ResultRow]) -> dict:
    """``{(estimator, s, n): (mean MSE, standard error, count)}`` over finite rows."""
    groups: dict = {}
    for row in rows:
        if np.isfinite(row.mse):
            groups.setdefault((row.estimator, row.s, row.n), []).append(row.mse)
    out = {}
    for key, vals in sorted(groups.items()):
        v = np.asarray(vals)
        se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
        out[key] = (float(v.mean()), se, int(v.size))
    return out


def fit_log_slope(rows) -> float:
    """Least-squares slope of ``log10(mean MSE)`` against ``log10(n)``.

    ``rows`` are :class:`ResultRow` objects or ``(n, mse)`` pairs; MSEs are
    averaged per ``n`` first, and non-finite or non-positive values dropped.
    """
    groups: dict = {}
    for row in rows:
        n, mse = (row.n, row.mse) if isinstance(row, ResultRow) else row
        if np.isfinite(mse) and mse > 0:
            groups.setdefault(int(n), []).append(float(mse))
    if len(groups) < 2:
        raise ValueError(f"need at least 2 distinct n with positive finite MSE, got {len(groups)}")
    ns = np.array(sorted(groups), dtype=float)
    means = np.array([np.mean(groups[int(n)]) for n in ns])
    slope, _ = np.polyfit(np.log10(ns), np.log10(means), 1)
    return float(slope)


def rows_to_csv(rows: Iterable[ResultRow], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow(row.as_csv_fields())
    return buf.getvalue()


def write_rows_csv(path, rows: Sequence[ResultRow]) -> None:
    atomic_write_text(path, rows_to_csv(rows))


def read_rows_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return [
            ResultRow(
                rec["scenario"], rec["estimator"], int(rec["n"]), float(rec["s"]), float(rec["lambda"]), int(rec["m"]),
                float(rec["mse"]), float(rec["fit_seconds"]), int(rec["cg_iters"]), int(rec["resample"]),
            )
            for rec in reader
        ]


class IncrementalCsv:
    """Append rows to ``<path>.partial`` as they arrive; :meth:`finish` writes the sorted file atomically."""

    def __init__(self, path):
        self.path = os.fspath(path)
        self.partial = self.path + ".partial"
        self._fh = open(self.partial, "w", newline="")
        self._fh.write(rows_to_csv([]))
        self._fh.flush()

    def __call__(self, row: ResultRow) -> None:
        self._fh.write(rows_to_csv([row], header=False))
        self._fh.flush()

    def finish(self, rows: Sequence[ResultRow]) -> None:
        self._fh.close()
        write_rows_csv(self.path, rows)
        os.unlink(self.partial)
