"""Uniform box grids, grid functions, and the norm/moment functionals.

Everything downstream (semigroup, expansions, solvers) carries scalar
functions as :class:`Field` objects: samples on a cell-centered uniform
grid over ``[-L, L]^N`` with ``N in {1, 2}``.  The grid is symmetric about
the origin so parity cancellations hold exactly in floating point.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

MultiIndex = tuple[int, ...]


class NormOrder(enum.Enum):
    """Marker for the L^infinity norm order (distinguished, not a sentinel float)."""

    INF = "inf"


QINF = NormOrder.INF


def as_norm_order(q) -> float | NormOrder:
    """Normalize a norm order to a float in [1, inf) or the QINF marker."""
    if q is QINF:
        return QINF
    if isinstance(q, str):
        if q.strip().lower() in ("inf", "infinity"):
            return QINF
        q = float(q)
    if isinstance(q, (int, float, np.floating)):
        qf = float(q)
        if math.isinf(qf):
            return QINF
        if qf < 1.0:
            raise ValueError(f"norm order must satisfy q >= 1, got {qf}")
        return qf
    raise TypeError(f"cannot interpret {q!r} as a norm order")


@dataclass(frozen=True)
class Domain:
    """Cell-centered uniform grid on the box [-halfwidth, halfwidth]^dim."""

    dim: int
    halfwidth: float
    points_per_dim: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.halfwidth <= 0:
            raise ValueError("halfwidth must be positive")
        m = self.points_per_dim
        if m < 16 or m % 2 != 0:
            raise ValueError(f"points_per_dim must be an even integer >= 16, got {m}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.halfwidth / self.points_per_dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_dim,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def axis(self) -> np.ndarray:
        """Cell centers along one axis; symmetric about 0, no point at 0."""
        m, h = self.points_per_dim, self.spacing
        return (np.arange(m) - (m - 1) / 2.0) * h

    def grid(self) -> tuple[np.ndarray, ...]:
        x = self.axis()
        if self.dim == 1:
            return (x,)
        return tuple(np.meshgrid(x, x, indexing="ij"))

    def radius(self) -> np.ndarray:
        g = self.grid()
        return np.sqrt(sum(c**2 for c in g))

    def points(self) -> np.ndarray:
        """All grid points as an array of shape (M^dim, dim)."""
        return np.stack([c.ravel() for c in self.grid()], axis=-1)


@dataclass
class Field:
    """A scalar function sampled on a Domain grid."""

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.domain.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.domain.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def copy(self) -> "Field":
        return Field(self.domain, self.values.copy())

    @staticmethod
    def from_function(domain: Domain, f) -> "Field":
        return Field(domain, f(*domain.grid()))

    @staticmethod
    def zeros(domain: Domain) -> "Field":
        return Field(domain, np.zeros(domain.shape))


@dataclass(frozen=True)
class NormReport:
    """An L^q norm and a weighted-L^1 seminorm of one field, side by side."""

    q: float | NormOrder
    ell: float
    lq_value: float
    weighted_value: float


def floor_bracket(k: float) -> int:
    """The unique integer b with k - 1 < b <= k, for k >= 0."""
    if k < 0:
        raise ValueError(f"floor_bracket requires k >= 0, got {k}")
    return int(math.floor(k))


def multi_indices_up_to(k: float, dim: int) -> list[MultiIndex]:
    """All multi-indices with |alpha| <= k, graded by |alpha|.

    Within a grade the first component decreases, so for any pair with
    beta <= alpha componentwise and beta != alpha, beta appears first.
    Returns [] for k < 0.
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    if k < 0:
        return []
    out: list[MultiIndex] = []
    for total in range(floor_bracket(k) + 1):
        if dim == 1:
            out.append((total,))
        else:
            out.extend((a, total - a) for a in range(total, -1, -1))
    return out


def mi_order(alpha: MultiIndex) -> int:
    return int(sum(alpha))


def mi_factorial(alpha: MultiIndex) -> float:
    return float(math.prod(math.factorial(a) for a in alpha))


def mi_binom(alpha: MultiIndex, beta: MultiIndex) -> float:
    return float(math.prod(math.comb(a, b) for a, b in zip(alpha, beta)))


def mi_le(beta: MultiIndex, alpha: MultiIndex) -> bool:
    return all(b <= a for b, a in zip(beta, alpha))


def mi_sub(alpha: MultiIndex, beta: MultiIndex) -> MultiIndex:
    return tuple(a - b for a, b in zip(alpha, beta))


def mi_add(alpha: MultiIndex, beta: MultiIndex) -> MultiIndex:
    return tuple(a + b for a, b in zip(alpha, beta))


def unit_indices(dim: int) -> list[MultiIndex]:
    return [tuple(1 if j == i else 0 for j in range(dim)) for i in range(dim)]


def monomial(points, alpha: MultiIndex) -> np.ndarray:
    """x^alpha on an array of points (shape (..., dim) or 1-d for dim 1)."""
    pts = np.asarray(points, dtype=float)
    if len(alpha) == 1:
        return pts**alpha[0]
    return pts[..., 0] ** alpha[0] * pts[..., 1] ** alpha[1]


def lq_norm(f: Field, q) -> float:
    """Discrete L^q norm; midpoint quadrature for finite q, max for q = inf."""
    q = as_norm_order(q)
    a = np.abs(f.values)
    if q is QINF:
        return float(a.max())
    return float((np.sum(a**q) * f.domain.cell_volume) ** (1.0 / q))


def weighted_l1(f: Field, ell: float) -> float:
    """Quadrature of |x|^ell |f(x)| over the box."""
    if ell < 0:
        raise ValueError("ell must be >= 0")
    r = f.domain.radius()
    w = np.ones_like(r) if ell == 0 else r**ell
    return float(np.sum(w * np.abs(f.values)) * f.domain.cell_volume)


def moment(f: Field, alpha: MultiIndex) -> float:
    """Quadrature of x^alpha f(x) over the box."""
    g = f.domain.grid()
    w = np.ones(f.domain.shape)
    for c, a in zip(g, alpha):
        if a:
            w = w * c**a
    return float(np.sum(w * f.values) * f.domain.cell_volume)


def mass(f: Field) -> float:
    return moment(f, (0,) * f.domain.dim)


def norm_report(f: Field, q, ell: float) -> NormReport:
    return NormReport(as_norm_order(q), float(ell), lq_norm(f, q), weighted_l1(f, ell))


def require_same_domain(a: Field, b: Field) -> None:
    if a.domain != b.domain:
        raise ValueError("fields live on different domains")


def all_pairs_ordered(indices: list[MultiIndex]) -> bool:
    """True iff every beta <= alpha (componentwise, beta != alpha) precedes alpha."""
    pos = {a: i for i, a in enumerate(indices)}
    for alpha, beta in product(indices, repeat=2):
        if beta != alpha and mi_le(beta, alpha) and pos[beta] >= pos[alpha]:
            return False
    return True
