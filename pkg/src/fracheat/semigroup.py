"""The fractional heat semigroup on grid functions.

Two realizations with deliberately different error profiles:

* :func:`apply` multiplies by the symbol on the discrete Fourier lattice.
  Fast (used inside time stepping), but periodization folds the kernel's
  algebraic tails back into the box, so it is only trusted for
  moment-matched differences or while the diffusing profile is far from
  the walls.
* :func:`convolve_exact` quadratures the free-space kernel against a
  compactly supported field at chosen evaluation points.  It is the
  tail-accurate path used by every rate-measurement harness.
"""

from __future__ import annotations

import numpy as np

from .errors import BoxValidityError, SupportViolationError
from .field import (Field, MultiIndex, QINF, as_norm_order, lq_norm, mi_order,
                    require_same_domain)
from .field import Domain
from .kernel import KernelSpec, get_kernel

SUPPORT_TOL = 1e-14


class SemigroupPlan:
    """Precomputed frequency lattice for one (spec, domain) pair.

    Treated as immutable after construction; apply() never mutates it.
    """

    def __init__(self, spec: KernelSpec, domain: Domain):
        if spec.dim != domain.dim:
            raise ValueError("kernel spec and domain dimensions differ")
        self.spec = spec
        self.domain = domain
        m, h = domain.points_per_dim, domain.spacing
        full = 2.0 * np.pi * np.fft.fftfreq(m, d=h)
        half = 2.0 * np.pi * np.fft.rfftfreq(m, d=h)
        if domain.dim == 1:
            self.xi = (half,)
            self.xi_abs = np.abs(half)
        else:
            g0, g1 = np.meshgrid(full, half, indexing="ij")
            self.xi = (g0, g1)
            self.xi_abs = np.hypot(g0, g1)
        self.symbol_base = self.xi_abs**spec.theta
        # Nyquist masks: odd derivative multipliers must vanish there to
        # keep real input -> real output exact.
        nyq = np.pi * m / (2.0 * domain.halfwidth)
        self._nyquist = tuple(np.isclose(np.abs(x), nyq) for x in self.xi)

    def multiplier(self, t: float, alpha: MultiIndex) -> np.ndarray:
        mult = np.exp(-t * self.symbol_base).astype(complex)
        for axis, a in enumerate(alpha):
            if a:
                mult = mult * (1j * self.xi[axis]) ** a
                if a % 2 == 1:
                    mult = np.where(self._nyquist[axis], 0.0, mult)
        return mult


def apply(plan: SemigroupPlan, phi: Field, t: float,
          alpha: MultiIndex | None = None) -> Field:
    """Evolve phi for time t and take the alpha-th spatial derivative."""
    if phi.domain != plan.domain:
        raise ValueError("field does not live on the plan's domain")
    if t < 0:
        raise ValueError("the semigroup is defined for t >= 0")
    dim = plan.domain.dim
    if alpha is None:
        alpha = (0,) * dim
    if t == 0 and mi_order(alpha) == 0:
        return phi.copy()
    spec = np.fft.rfftn(phi.values)
    out = np.fft.irfftn(spec * plan.multiplier(t, alpha), s=phi.values.shape)
    return Field(plan.domain, out)


def require_box_validity(domain: Domain, theta: float, t: float,
                         fraction: float = 8.0) -> None:
    """Refuse configurations where the profile scale reaches the box wall."""
    if t > 0 and t ** (1.0 / theta) > domain.halfwidth / fraction:
        raise BoxValidityError(
            f"t={t} has diffusion scale {t ** (1.0 / theta):.3g} beyond "
            f"L/{fraction:g} = {domain.halfwidth / fraction:.3g}; enlarge the box")


def support_cells(phi: Field, support=None) -> tuple[np.ndarray, np.ndarray]:
    """(points, values) of the nonzero cells; validates a declared support box.

    ``support`` is a per-axis (lo, hi) sequence.  Values above SUPPORT_TOL
    outside the declared box are a contract violation.
    """
    pts = phi.domain.points()
    vals = phi.values.ravel()
    if support is not None:
        support = np.atleast_2d(np.asarray(support, dtype=float))
        inside = np.ones(pts.shape[0], dtype=bool)
        for axis in range(phi.domain.dim):
            lo, hi = support[axis]
            inside &= (pts[:, axis] >= lo) & (pts[:, axis] <= hi)
        if np.any(np.abs(vals[~inside]) > SUPPORT_TOL):
            worst = float(np.max(np.abs(vals[~inside])))
            raise SupportViolationError(
                f"field has mass {worst:.3e} outside the declared support box")
        keep = inside & (vals != 0.0)
    else:
        keep = vals != 0.0
    if not keep.any():
        return pts[:0], vals[:0]
    return pts[keep], vals[keep]


def convolve_exact(spec: KernelSpec, phi: Field, t: float,
                   alpha: MultiIndex | None = None,
                   eval_points=None, support=None) -> np.ndarray:
    """Free-space kernel convolution at arbitrary evaluation points.

    Returns the alpha-th derivative of the evolved field, i.e. the
    convolution of the derivative kernel with phi, with the same sign
    convention as the spectral path.  phi must be compactly supported;
    midpoint quadrature over its cells is spectrally accurate because the
    integrand vanishes smoothly at the support edge.
    """
    if t <= 0:
        raise ValueError("convolve_exact requires t > 0")
    dim = phi.domain.dim
    if alpha is None:
        alpha = (0,) * dim
    if eval_points is None:
        eval_points = phi.domain.points() if dim == 2 else phi.domain.axis()
    ypts, yvals = support_cells(phi, support)
    pts = np.asarray(eval_points, dtype=float)
    if dim == 1:
        pts = pts.reshape(-1)
        diff = pts[:, None] - ypts[:, 0][None, :]
    else:
        pts = pts.reshape(-1, 2)
        diff = pts[:, None, :] - ypts[None, :, :]
    kern = get_kernel(spec)
    kvals = kern.deriv(alpha, 0, diff, t)
    return kvals @ yvals * phi.domain.cell_volume


def grad_magnitude(plan: SemigroupPlan, phi: Field, t: float, j: int) -> Field:
    """Euclidean magnitude of the order-j derivative tensor of the evolved field."""
    if j == 0:
        return apply(plan, phi, t)
    dim = plan.domain.dim
    if j == 1:
        comps = [apply(plan, phi, t, tuple(int(i == ax) for i in range(dim))).values
                 for ax in range(dim)]
    elif j == 2:
        comps = []
        for a1 in range(dim):
            for a2 in range(dim):
                alpha = tuple(int(i == a1) + int(i == a2) for i in range(dim))
                comps.append(apply(plan, phi, t, alpha).values)
    else:
        raise ValueError("j must be 0, 1, or 2")
    return Field(plan.domain, np.sqrt(sum(c**2 for c in comps)))


def verify_smoothing(plan: SemigroupPlan, phi: Field, q, r, j: int,
                     times) -> float:
    """Fitted constant of the derivative-smoothing estimate.

    Reports max over times of ||grad^j S(t) phi||_r * t^(N/theta (1/q - 1/r) + j/theta)
    divided by ||phi||_q; a finite value confirms the estimate's shape.
    """
    q = as_norm_order(q)
    r = as_norm_order(r)
    qv = np.inf if q is QINF else q
    rv = np.inf if r is QINF else r
    if qv > rv:
        raise ValueError("smoothing estimate requires q <= r")
    n_over_theta = plan.domain.dim / plan.spec.theta
    denom = lq_norm(phi, q)
    worst = 0.0
    for t in times:
        g = grad_magnitude(plan, phi, t, j)
        rate = t ** (n_over_theta * (1.0 / qv - 1.0 / rv) + j / plan.spec.theta)
        worst = max(worst, lq_norm(g, r) * rate / denom)
    return worst
