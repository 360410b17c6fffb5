"""Input checks shared by the functional API, the estimators and the CLI."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_X_y

__all__ = ["OutOfDomainError", "check_inputs", "check_points", "check_in_domain", "check_positive"]


class OutOfDomainError(ValueError):
    """Raised when input coordinates fall outside ``[-L, L]^d``.

    ``rows`` holds the offending (0-based) row indices.
    """

    def __init__(self, rows, L):
        self.rows = np.asarray(rows, dtype=int)
        self.L = L
        shown = ", ".join(str(r) for r in self.rows[:10])
        more = "" if self.rows.size <= 10 else f" (+{self.rows.size - 10} more)"
        super().__init__(f"{self.rows.size} row(s) outside [-{L}, {L}]^d: {shown}{more}")


def check_inputs(X, y):
    """Validate a training pair; returns ``(X, y)`` as float arrays, ``X`` 2-D."""
    X, y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
    return X, np.asarray(y, dtype=np.float64)


def check_points(X, d: int | None = None) -> np.ndarray:
    X = check_array(X, dtype=np.float64)
    if d is not None and X.shape[1] != d:
        raise ValueError(f"X has {X.shape[1]} features, but the model was fit with {d}")
    return X


def check_in_domain(X, L: float) -> None:
    bad = np.flatnonzero(np.any(np.abs(X) > L, axis=1))
    if bad.size:
        raise OutOfDomainError(bad, L)


def check_positive(name: str, value, allow_zero: bool = False) -> float:
    value = float(value)
    ok = value >= 0 if allow_zero else value > 0
    if not (ok and np.isfinite(value)):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be finite and {bound}, got {value}")
    return value
