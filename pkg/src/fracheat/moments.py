"""Reference profiles, scaled derivative atoms, and moment matching.

The expansion machinery subtracts from a field a combination of atoms

    psi_alpha(x, s) = (1+s)^(-(N+|alpha|)/theta) * ((-1)^|alpha|/alpha!)
                      * (d^alpha psi)((1+s)^(-1/theta) x)

built from one radially symmetric profile psi with unit mass.  The weights
come from a triangular recursion in graded multi-index order, chosen so
the residual field has vanishing moments through the requested order.
The default profile is the unit Gaussian: every derivative is bounded,
integrable against any polynomial weight, and dominated by the heat
kernel, so it is admissible for every matching order, which the kernel
profile itself is not once the order reaches theta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_hermite

from .field import (Field, MultiIndex, mi_binom, mi_factorial, mi_le, mi_order,
                    mi_sub, moment, monomial, multi_indices_up_to, weighted_l1)
from .kernel import KernelSpec, get_kernel, kernel_moment
from .semigroup import SemigroupPlan, apply, convolve_exact


class PsiProfile:
    """A radial profile with its derivative family and raw moments.

    kind "gaussian" uses pi^(-N/2) exp(-|x|^2) with Hermite closed forms.
    kind "custom" wraps a caller-supplied derivative evaluator
    ``deriv_eval(alpha, points)`` plus a raw-moment function.
    """

    def __init__(self, dim: int, kind: str = "gaussian", deriv_eval=None,
                 raw_moment=None, support_radius: float = 8.5):
        if dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        self.dim = dim
        self.kind = kind
        self.support_radius = support_radius
        if kind == "gaussian":
            self._deriv_eval = self._gaussian_deriv
            self._raw_moment = self._gaussian_raw_moment
        elif kind == "custom":
            if deriv_eval is None or raw_moment is None:
                raise ValueError("custom profiles need deriv_eval and raw_moment")
            self._deriv_eval = deriv_eval
            self._raw_moment = raw_moment
        else:
            raise ValueError(f"unknown profile kind {kind!r}")
        if abs(self._raw_moment((0,) * dim) - 1.0) > 1e-10:
            raise ValueError("profile must have unit mass")

    # -- gaussian closed forms ------------------------------------------------

    def _gaussian_deriv(self, alpha: MultiIndex, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.dim == 1:
            x = pts
            out = math.pi ** (-0.5) * np.exp(-x * x)
            a = alpha[0]
            if a:
                out = out * (-1.0) ** a * eval_hermite(a, x)
            return out
        out = math.pi ** (-1.0) * np.exp(-(pts[..., 0] ** 2 + pts[..., 1] ** 2))
        for axis, a in enumerate(alpha):
            if a:
                out = out * (-1.0) ** a * eval_hermite(a, pts[..., axis])
        return out

    def _gaussian_raw_moment(self, gamma: MultiIndex) -> float:
        out = 1.0
        for g in gamma:
            if g % 2 == 1:
                return 0.0
            # int u^(2j) exp(-u^2) du / sqrt(pi) = (2j-1)!! / 2^j
            j = g // 2
            out *= math.prod(range(1, 2 * j, 2)) / 2.0**j
        return out

    # -- public surface ---------------------------------------------------------

    def deriv(self, alpha: MultiIndex, points) -> np.ndarray:
        return self._deriv_eval(alpha, points)

    def raw_moment(self, gamma: MultiIndex) -> float:
        return float(self._raw_moment(gamma))

    def __call__(self, points) -> np.ndarray:
        return self.deriv((0,) * self.dim, points)


def kernel_profile(spec: KernelSpec) -> PsiProfile:
    """The unit-time kernel as a reference profile (matching order < theta only)."""
    kern = get_kernel(spec)
    return PsiProfile(
        spec.dim, kind="custom",
        deriv_eval=lambda alpha, pts: kern.deriv(alpha, 0, pts, 1.0),
        raw_moment=lambda gamma: kernel_moment(spec, gamma),
        support_radius=math.inf,
    )


def psi_alpha(profile: PsiProfile, alpha: MultiIndex, theta: float, s: float,
              points) -> np.ndarray:
    """The rescaled derivative atom at age s, evaluated at points."""
    if s < 0:
        raise ValueError("s must be >= 0")
    lam = (1.0 + s) ** (-1.0 / theta)
    pref = ((1.0 + s) ** (-(profile.dim + mi_order(alpha)) / theta)
            * (-1.0) ** mi_order(alpha) / mi_factorial(alpha))
    pts = np.asarray(points, dtype=float)
    return pref * profile.deriv(alpha, lam * pts)


def sample_psi_alpha(profile: PsiProfile, alpha: MultiIndex, theta: float,
                     s: float, domain) -> Field:
    """psi_alpha sampled on the grid, hard-truncated at the declared support."""
    pts = domain.points() if domain.dim == 2 else domain.axis()
    vals = psi_alpha(profile, alpha, theta, s, pts)
    radius = profile.support_radius * (1.0 + s) ** (1.0 / theta)
    if math.isfinite(radius):
        r = np.abs(pts) if domain.dim == 1 else np.hypot(pts[..., 0], pts[..., 1])
        vals = np.where(r <= radius, vals, 0.0)
    return Field(domain, vals.reshape(domain.shape))


def atom_support(profile: PsiProfile, theta: float, s: float, dim: int):
    radius = profile.support_radius * (1.0 + s) ** (1.0 / theta)
    return [(-radius, radius)] * dim


def evolved_atom(plan: SemigroupPlan, profile: PsiProfile, alpha: MultiIndex,
                 t: float, s: float) -> Field:
    """The atom pushed forward by the semigroup (spectral path)."""
    return apply(plan, sample_psi_alpha(profile, alpha, plan.spec.theta, s,
                                        plan.domain), t)


def evolved_atom_at(spec: KernelSpec, profile: PsiProfile, alpha: MultiIndex,
                    t: float, s: float, domain, eval_points) -> np.ndarray:
    """Exact-path variant of the evolved atom at arbitrary points."""
    f = sample_psi_alpha(profile, alpha, spec.theta, s, domain)
    return convolve_exact(spec, f, t, eval_points=eval_points,
                          support=atom_support(profile, spec.theta, s, spec.dim))


def cross_moment(profile: PsiProfile, alpha: MultiIndex, beta: MultiIndex,
                 theta: float, s: float) -> float:
    """int x^alpha psi_beta(x, s) dx, by parts-integration closed form.

    Equals (1+s)^((|alpha|-|beta|)/theta) * binom(alpha, beta) * raw moment
    of alpha - beta when beta <= alpha, else zero; unit diagonal, so the
    moment-matching system is unitriangular in any graded order.
    """
    if not mi_le(beta, alpha):
        return 0.0
    scale = (1.0 + s) ** ((mi_order(alpha) - mi_order(beta)) / theta)
    return scale * mi_binom(alpha, beta) * profile.raw_moment(mi_sub(alpha, beta))


def cross_moment_quadrature(profile: PsiProfile, alpha: MultiIndex,
                            beta: MultiIndex, theta: float, s: float,
                            n: int = 4001) -> float:
    """Same integral by dense midpoint quadrature on the scaled support."""
    radius = profile.support_radius * (1.0 + s) ** (1.0 / theta)
    if not math.isfinite(radius):
        raise ValueError("quadrature path needs a finite support radius")
    if profile.dim == 1:
        x = np.linspace(-radius, radius, n)
        h = x[1] - x[0]
        vals = psi_alpha(profile, beta, theta, s, x)
        return float(np.sum(x**alpha[0] * vals) * h)
    m = 801
    x = np.linspace(-radius, radius, m)
    h = x[1] - x[0]
    xg, yg = np.meshgrid(x, x, indexing="ij")
    pts = np.stack([xg, yg], axis=-1)
    vals = psi_alpha(profile, beta, theta, s, pts)
    return float(np.sum(monomial(pts, alpha) * vals) * h * h)


@dataclass
class CoefficientTable:
    """Moment-matching weights: multi-index -> coefficient, at one age s."""

    s: float
    entries: dict[MultiIndex, float]

    def __getitem__(self, alpha: MultiIndex) -> float:
        return self.entries[alpha]

    def to_text(self) -> str:
        lines = [" ".join(str(c) for c in alpha) + f" {value:.17g}"
                 for alpha, value in self.entries.items()]
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str, s: float = 0.0) -> "CoefficientTable":
        entries: dict[MultiIndex, float] = {}
        for line in text.strip().splitlines():
            parts = line.split()
            entries[tuple(int(c) for c in parts[:-1])] = float(parts[-1])
        return CoefficientTable(s, entries)


def compute_weights(f: Field, s: float, order: float, profile: PsiProfile,
                    theta: float) -> CoefficientTable:
    """Expansion weights of f at age s, through the requested order.

    Triangular recursion in graded multi-index order: every beta < alpha
    is available when alpha is processed, and the diagonal of the
    cross-moment system is one.
    """
    entries: dict[MultiIndex, float] = {}
    for alpha in multi_indices_up_to(order, f.domain.dim):
        value = moment(f, alpha)
        for beta, coeff in entries.items():
            if beta != alpha and mi_le(beta, alpha):
                value -= coeff * cross_moment(profile, alpha, beta, theta, s)
        entries[alpha] = value
    return CoefficientTable(s, entries)


def matching_residual_moments(f: Field, table: CoefficientTable, order: float,
                              profile: PsiProfile, theta: float) -> dict[MultiIndex, float]:
    """Moments of f minus the weighted atoms; all should vanish."""
    out = {}
    for beta in multi_indices_up_to(order, f.domain.dim):
        residual = moment(f, beta)
        for alpha, coeff in table.entries.items():
            residual -= coeff * cross_moment(profile, beta, alpha, theta, table.s)
        out[beta] = residual
    return out


def matched_residual_field(f: Field, table: CoefficientTable,
                           profile: PsiProfile, theta: float) -> Field:
    """f minus its atom expansion at age s (sampled on f's grid)."""
    vals = f.values.copy()
    for alpha, coeff in table.entries.items():
        vals -= coeff * sample_psi_alpha(profile, alpha, theta, table.s,
                                         f.domain).values
    return Field(f.domain, vals)


def has_vanishing_moments(f: Field, order: float, j: int, theta: float,
                          tol: float) -> tuple[bool, dict]:
    """Membership test for the invariant subspace with orders <= order - j - theta.

    Moments are compared against tol * (1 + weighted mass of matching
    order), so large-amplitude fields are not spuriously rejected.  An
    empty index set (order - j - theta < 0) is vacuously inside.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    cutoff = order - j - theta
    worst = {"alpha": None, "value": 0.0, "threshold": None}
    for alpha in multi_indices_up_to(cutoff, f.domain.dim):
        value = abs(moment(f, alpha))
        threshold = tol * (1.0 + weighted_l1(f, mi_order(alpha)))
        if value / threshold > worst["value"] / (worst["threshold"] or 1.0):
            worst = {"alpha": alpha, "value": value, "threshold": threshold}
        if value > threshold:
            return False, worst
    return True, worst
