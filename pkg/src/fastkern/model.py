"""Training data and fitted-model containers, with the JSON model format."""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fourier_grid import ESTIMATOR_KINDS, BoxDomain, DiffOperatorSpec, MultiIndexGrid, default_half_period
from .solvers import SolveReport
from .validation import check_in_domain, check_inputs

__all__ = ["SampleSet", "FittedModel", "MODEL_VERSION", "atomic_write_text"]

MODEL_VERSION = "fastkern-model-v1"


@dataclass(frozen=True)
class SampleSet:
    """``n`` observations ``(X_j, Y_j)`` in ``[-L, L]^d``."""

    X: np.ndarray
    Y: np.ndarray
    L: float

    def __post_init__(self):
        X, Y = check_inputs(self.X, self.Y)
        L = float(self.L)
        if not (L > 0 and np.isfinite(L)):
            raise ValueError(f"half-period L must be positive, got {self.L}")
        check_in_domain(X, L)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "L", L)

    @classmethod
    def from_arrays(cls, X, Y, L: float | None = None) -> "SampleSet":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return cls(X, Y, default_half_period(X) if L is None else L)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.X[idx], self.Y[idx], self.L)


@dataclass
class FittedModel:
    """Fourier coefficients plus everything needed to evaluate and reproduce them.

    ``theta`` is flat: one ``(2m+1)^d`` tensor in C order, or for the additive
    kind ``d`` consecutive blocks of length ``2m+1``.
    """

    kind: str
    theta: np.ndarray
    d: int
    m: int
    L: float
    s: float
    lam: float
    mu: Optional[float] = None
    op: Optional[DiffOperatorSpec] = None
    box: Optional[BoxDomain] = None
    report: Optional[SolveReport] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        self.theta = np.asarray(self.theta, dtype=complex).reshape(-1)
        if self.theta.size != self.expected_size:
            raise ValueError(f"{self.kind} model with d={self.d}, m={self.m} needs {self.expected_size} coefficients, got {self.theta.size}")

    @property
    def expected_size(self) -> int:
        side = 2 * self.m + 1
        return self.d * side if self.kind == "additive" else side**self.d

    @property
    def grid(self) -> MultiIndexGrid:
        return MultiIndexGrid(1 if self.kind == "additive" else self.d, self.m)

    def blocks(self) -> list[np.ndarray]:
        """Coefficient blocks: ``d`` univariate blocks for additive models, else one tensor."""
        if self.kind == "additive":
            return list(self.theta.reshape(self.d, 2 * self.m + 1))
        return [self.theta.reshape((2 * self.m + 1,) * self.d)]

    def hermitian_defect(self) -> float:
        """``max over blocks of |theta_{-k} - conj(theta_k)| / |theta|``."""
        norm = np.linalg.norm(self.theta)
        if norm == 0:
            return 0.0
        return max(np.linalg.norm(b.ravel()[::-1] - np.conj(b.ravel())) for b in self.blocks()) / norm

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "kind": self.kind,
            "d": int(self.d),
            "m": int(self.m),
            "L": float(self.L),
            "s": float(self.s),
            "lambda": float(self.lam),
            "mu": None if self.mu is None else float(self.mu),
            "diff_operator": None if self.op is None else self.op.to_list(),
            "box": None if self.box is None else {"lower": list(self.box.lower), "upper": list(self.box.upper)},
            "theta": [[float(z.real), float(z.imag)] for z in self.theta],
            "solve_report": None if self.report is None else self.report.to_dict(),
            "info": self.info,
        }

    def to_json(self) -> str:
        # json writes floats with repr(), the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedModel":
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')!r}; expected {MODEL_VERSION!r}")
        theta = np.asarray(doc["theta"], dtype=float).reshape(-1, 2)
        op = doc.get("diff_operator")
        box = doc.get("box")
        rep = doc.get("solve_report")
        return cls(
            kind=doc["kind"],
            theta=theta[:, 0] + 1j * theta[:, 1],
            d=int(doc["d"]),
            m=int(doc["m"]),
            L=float(doc["L"]),
            s=float(doc["s"]),
            lam=float(doc["lambda"]),
            mu=doc.get("mu"),
            op=None if op is None else DiffOperatorSpec.from_list(op),
            box=None if box is None else BoxDomain(box["lower"], box["upper"], doc["L"]),
            report=None if rep is None else SolveReport(**rep),
            info=doc.get("info") or {},
        )

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "FittedModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
