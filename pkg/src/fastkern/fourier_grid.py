"""Frequency grids, the truncated Fourier feature map and the diagonal and
analytic matrices built on top of it.

Every multi-index set used in the package is the cube ``{-m, ..., m}^d``,
flattened lexicographically with the last coordinate varying fastest.  This is
the same layout numpy uses for a C-ordered ``(2m+1,) * d`` tensor, so a
flattened coefficient vector and a mode tensor can be reshaped into each other
without any permutation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "MultiIndexGrid",
    "DiffOperatorSpec",
    "BoxDomain",
    "grid_indices",
    "feature_map",
    "sobolev_diagonal",
    "diff_op_diagonal",
    "box_fourier_generating",
    "schedule_hyperparams",
    "default_half_period",
    "ESTIMATOR_KINDS",
]

ESTIMATOR_KINDS = ("sobolev", "lowbias", "pik_box", "pik_collocation", "additive")


@dataclass(frozen=True)
class MultiIndexGrid:
    """The ordered frequency set ``{-m..m}^d``."""

    d: int
    m: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d!r}")
        if int(self.m) != self.m or self.m < 0:
            raise ValueError(f"m must be a nonnegative integer, got {self.m!r}")

    @property
    def side(self) -> int:
        return 2 * self.m + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def size(self) -> int:
        return self.side**self.d

    def indices(self) -> np.ndarray:
        """All multi-indices as an integer array of shape ``(size, d)``."""
        return grid_indices(self.d, self.m)

    def flatten(self, k) -> int:
        k = np.asarray(k, dtype=np.int64).reshape(self.d)
        if np.any(np.abs(k) > self.m):
            raise IndexError(f"multi-index {tuple(k)} outside the grid with m={self.m}")
        return int(np.ravel_multi_index(tuple(k + self.m), self.shape))

    def unflatten(self, i: int) -> tuple[int, ...]:
        if not 0 <= i < self.size:
            raise IndexError(f"flat index {i} outside [0, {self.size})")
        return tuple(int(c) - self.m for c in np.unravel_index(i, self.shape))

    def negation_permutation(self) -> np.ndarray:
        """``perm[i]`` is the flat index of ``-k`` where ``k`` has flat index ``i``.

        In the C-ordered layout, negating every coordinate reverses the flat
        order, so the permutation is simply ``size - 1 - i``.
        """
        return np.arange(self.size - 1, -1, -1)


@dataclass(frozen=True)
class DiffOperatorSpec:
    """Linear constant-coefficient differential operator ``sum_a c_a d^a f``.

    ``terms`` is a sequence of ``(alpha, coefficient)`` pairs where ``alpha`` is
    a multi-index of nonnegative integers, one per input dimension.
    """

    terms: tuple[tuple[tuple[int, ...], float], ...]
    order: int = field(init=False)

    def __init__(self, terms: Sequence[tuple[Sequence[int], float]]):
        cleaned = []
        for alpha, coef in terms:
            alpha = tuple(int(a) for a in np.atleast_1d(alpha))
            if any(a < 0 for a in alpha):
                raise ValueError(f"multi-index entries must be nonnegative, got {alpha}")
            coef = float(coef)
            if not math.isfinite(coef):
                raise ValueError(f"non-finite coefficient {coef} for term {alpha}")
            cleaned.append((alpha, coef))
        if not cleaned:
            raise ValueError("a differential operator needs at least one term")
        dims = {len(a) for a, _ in cleaned}
        if len(dims) != 1:
            raise ValueError(f"all multi-indices must share one dimension, got {sorted(dims)}")
        object.__setattr__(self, "terms", tuple(cleaned))
        object.__setattr__(self, "order", max(sum(a) for a, _ in cleaned))

    @property
    def d(self) -> int:
        return len(self.terms[0][0])

    @classmethod
    def parse(cls, text: str, d: int | None = None) -> "DiffOperatorSpec":
        """Parse ``"a:alpha,a:alpha,..."``.

        ``alpha`` lists one derivative order per dimension with no separator
        (``"1:1,-1:0"`` is ``f' - f`` in 1-D, ``"1:20,1:02"`` is the 2-D
        Laplacian).  Orders above 9 are not expressible in this syntax.
        """
        terms = []
        for chunk in text.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                coef, alpha = chunk.split(":")
                alpha = tuple(int(c) for c in alpha.strip())
                coef = float(coef)
            except ValueError:
                raise ValueError(f"cannot parse differential term {chunk!r}; expected 'coef:alpha'") from None
            if not alpha:
                raise ValueError(f"empty multi-index in term {chunk!r}")
            terms.append((alpha, coef))
        spec = cls(terms)
        if d is not None and spec.d != d:
            raise ValueError(f"operator has dimension {spec.d} but the data has d={d}")
        return spec

    def to_list(self) -> list:
        return [[list(alpha), coef] for alpha, coef in self.terms]

    @classmethod
    def from_list(cls, items) -> "DiffOperatorSpec":
        return cls([(tuple(alpha), coef) for alpha, coef in items])


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``prod_l (lower_l, upper_l)`` inside ``[-L, L]^d``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    L: float

    def __init__(self, lower, upper, L):
        lower = tuple(float(a) for a in np.atleast_1d(lower))
        upper = tuple(float(b) for b in np.atleast_1d(upper))
        L = float(L)
        if len(lower) != len(upper):
            raise ValueError("lower and upper bounds must have the same length")
        if not L > 0:
            raise ValueError(f"half-period L must be positive, got {L}")
        for a, b in zip(lower, upper):
            if not a < b:
                raise ValueError(f"empty box side ({a}, {b})")
            if a < -L or b > L:
                raise ValueError(f"box side ({a}, {b}) is not inside [-{L}, {L}]")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "L", L)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    @classmethod
    def parse(cls, text: str, L: float) -> "BoxDomain":
        """Parse ``"a1,b1;a2,b2;..."``."""
        lower, upper = [], []
        for side in text.split(";"):
            a, b = (float(v) for v in side.split(","))
            lower.append(a)
            upper.append(b)
        return cls(lower, upper, L)


def grid_indices(d: int, m: int) -> np.ndarray:
    """Multi-indices of ``{-m..m}^d`` in flattening order, shape ``((2m+1)^d, d)``."""
    if d < 1 or m < 0:
        raise ValueError(f"need d >= 1 and m >= 0, got d={d}, m={m}")
    axes = np.meshgrid(*([np.arange(-m, m + 1)] * d), indexing="ij")
    return np.stack([a.ravel() for a in axes], axis=1)


def feature_map(x, grid: MultiIndexGrid, L: float) -> np.ndarray:
    """Truncated feature map ``phi(x)_k = exp(-i pi <k, x> / (2L))``.

    ``x`` may be a single point (shape ``(d,)``) or a batch ``(n, d)``; the
    result has shape ``(size,)`` or ``(n, size)`` accordingly.
    """
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    x = np.atleast_2d(x.reshape(1, -1) if single else x)
    if x.shape[1] != grid.d:
        raise ValueError(f"point dimension {x.shape[1]} does not match grid d={grid.d}")
    phase = x @ grid.indices().T.astype(float)
    out = np.exp(-1j * np.pi / (2.0 * L) * phase)
    return out[0] if single else out


def sobolev_diagonal(grid: MultiIndexGrid, s: float) -> np.ndarray:
    """Diagonal of the Sobolev weight matrix, ``sqrt(1 + |k|_2^(2s))``."""
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    sq = np.sum(grid.indices().astype(float) ** 2, axis=1)
    return np.sqrt(1.0 + sq**s)


def diff_op_diagonal(grid: MultiIndexGrid, op: DiffOperatorSpec, L: float) -> np.ndarray:
    """``sum_a c_a (-i pi / 2L)^|a| prod_l k_l^a_l`` for every grid index (``0^0 = 1``).

    For real coefficients this is the complex conjugate of the multiplier that
    ``d^a`` applies to the ``exp(+i pi <k,x>/2L)`` coefficient expansion used by
    :func:`fastkern.fitting.predict`; the estimators account for that.
    """
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    if op.d != grid.d:
        raise ValueError(f"operator dimension {op.d} does not match grid d={grid.d}")
    k = grid.indices().astype(float)
    out = np.zeros(grid.size, dtype=complex)
    for alpha, coef in op.terms:
        # float ** 0 is 1.0 for every base, including 0.0
        mono = np.prod(k ** np.asarray(alpha, dtype=float), axis=1)
        out += coef * (-1j * np.pi / (2.0 * L)) ** sum(alpha) * mono
    return out


def box_fourier_generating(d: int, m: int, box: BoxDomain) -> np.ndarray:
    """``C(q) = (4L)^-d int_box exp(i pi <q, x> / 2L) dx`` for ``q`` in ``{-2m..2m}^d``.

    Returned as a C-ordered tensor of shape ``(4m+1,) * d``, entry ``q + 2m``.
    """
    if box.d != d:
        raise ValueError(f"box dimension {box.d} does not match d={d}")
    L = box.L
    q = np.arange(-2 * m, 2 * m + 1, dtype=float)
    factors = []
    for a, b in zip(box.lower, box.upper):
        f = np.empty(q.size, dtype=complex)
        nz = q != 0
        w = np.pi * q[nz] / (2.0 * L)
        f[nz] = (np.exp(1j * w * b) - np.exp(1j * w * a)) / (1j * w) / (4.0 * L)
        f[~nz] = (b - a) / (4.0 * L)
        factors.append(f)
    out = factors[0]
    for f in factors[1:]:
        out = np.multiply.outer(out, f)
    return np.asarray(out, dtype=complex)


def _ceil_power(x: float) -> int:
    # n**(1/3) for n=1000 is 9.999999999999998; snap near-integers before ceil
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return int(math.ceil(x))


def schedule_hyperparams(n: int, s: float, d: int, estimator_kind: str) -> tuple[int, float]:
    """Rate-optimal truncation level ``m`` and ridge parameter ``lambda``.

    Non-additive kinds use ``m = ceil(n^(1/(2s+d)))`` and
    ``lambda = n^(-2s/(2s+d))``; the additive kind uses the univariate rate with
    ``m = max(1, ceil(n^(1/(2s+1)) / d))`` and ``lambda = n^(-2s/(2s+1))``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if estimator_kind not in ESTIMATOR_KINDS:
        raise ValueError(f"unknown estimator kind {estimator_kind!r}")
    if estimator_kind == "additive":
        if not s > 0.5:
            raise ValueError(f"additive models need s > 1/2, got s={s}")
        rate = 2.0 * s + 1.0
        m = max(1, _ceil_power(n ** (1.0 / rate) / d))
        lam = float(n) ** (-2.0 * s / rate)
        return m, lam
    if not s > d / 2:
        raise ValueError(f"need s > d/2 = {d / 2}, got s={s}")
    rate = 2.0 * s + d
    m = max(1, _ceil_power(n ** (1.0 / rate)))
    lam = float(n) ** (-2.0 * s / rate)
    return m, lam


def default_half_period(X) -> float:
    """Smallest half-period used by default: ``max(1, max |X|)``."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return 1.0
    return float(max(1.0, np.max(np.abs(X))))
