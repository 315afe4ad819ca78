"""Locating and tracking the maximizer of the evolved field.

The maximizer of the linear flow converges to the data's center of mass;
this module measures that.  Fields are evaluated through the exact
convolution path on the grid (the spectral path's periodized tails can
bias an argmax at late times), located by discrete argmax, and refined by
a quadratic fit on the surrounding stencil.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import BoxValidityError
from .field import Field, mass, moment, unit_indices
from .kernel import KernelSpec, get_kernel
from .semigroup import convolve_exact


@dataclass
class HotspotTrack:
    times: np.ndarray
    locations: np.ndarray          # (T,) or (T, 2)
    max_values: np.ndarray
    unique_flags: np.ndarray
    center_of_mass: np.ndarray
    first_unique_time: float | None = None

    def errors(self) -> np.ndarray:
        if self.locations.ndim == 1:
            return np.abs(self.locations - self.center_of_mass)
        return np.hypot(*(self.locations - self.center_of_mass).T)

    def to_csv(self) -> str:
        dim = 1 if self.locations.ndim == 1 else 2
        header = ["t", "x1"] + (["x2"] if dim == 2 else []) + ["max_value", "unique"]
        lines = [",".join(header)]
        for i, t in enumerate(self.times):
            loc = ([self.locations[i]] if dim == 1 else list(self.locations[i]))
            cells = [f"{t:.17g}"] + [f"{v:.17g}" for v in loc] \
                + [f"{self.max_values[i]:.17g}", str(bool(self.unique_flags[i]))]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def locate(field: Field, tie_tol: float = 1e-3):
    """Discrete argmax with quadratic subpixel refinement.

    Returns (location, value, unique).  unique is true when exactly one
    strict interior local maximum sits within tie_tol (relative) of the
    global maximum.  A maximum on the box boundary means the diffusion
    reached the wall: rejected as an invalid configuration.
    """
    vals = field.values
    if np.all(vals == vals.ravel()[0]):
        raise ValueError("cannot locate the maximum of a constant field")
    dom = field.domain
    h = dom.spacing
    axis = dom.axis()
    if dom.dim == 1:
        i = int(np.argmax(vals))
        if i in (0, vals.size - 1):
            raise BoxValidityError("maximum sits on the box boundary")
        num = vals[i - 1] - vals[i + 1]
        den = vals[i - 1] - 2.0 * vals[i] + vals[i + 1]
        shift = 0.5 * num / den if den != 0 else 0.0
        loc = axis[i] + h * shift
        value = float(vals[i] - 0.25 * num * shift)
        interior = vals[1:-1]
        strict = (interior > vals[:-2]) & (interior > vals[2:])
        near = interior >= (1.0 - tie_tol) * vals[i]
        unique = int(np.sum(strict & near)) == 1
        return float(loc), value, bool(unique)
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    m = vals.shape[0]
    if i in (0, m - 1) or j in (0, m - 1):
        raise BoxValidityError("maximum sits on the box boundary")
    sx = 0.5 * (vals[i - 1, j] - vals[i + 1, j]) \
        / (vals[i - 1, j] - 2 * vals[i, j] + vals[i + 1, j])
    sy = 0.5 * (vals[i, j - 1] - vals[i, j + 1]) \
        / (vals[i, j - 1] - 2 * vals[i, j] + vals[i, j + 1])
    loc = np.array([axis[i] + h * sx, axis[j] + h * sy])
    inter = vals[1:-1, 1:-1]
    strict = np.ones(inter.shape, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            strict &= inter > vals[1 + di:m - 1 + di, 1 + dj:m - 1 + dj]
    near = inter >= (1.0 - tie_tol) * vals[i, j]
    unique = int(np.sum(strict & near)) == 1
    return loc, float(vals[i, j]), bool(unique)


def evolved_field(spec: KernelSpec, phi: Field, t: float,
                  support=None) -> Field:
    """The evolved data sampled on its own grid through the exact path."""
    pts = phi.domain.points() if phi.domain.dim == 2 else phi.domain.axis()
    vals = convolve_exact(spec, phi, t, eval_points=pts, support=support)
    return Field(phi.domain, vals.reshape(phi.domain.shape))


def track(spec: KernelSpec, phi: Field, times, support=None) -> HotspotTrack:
    """Locate the hot spot of the evolved data at each time.

    Requires positive total mass (the limit theorem's hypothesis); reports
    the first time the maximizer is unique and the drift of the location
    toward the center of mass.
    """
    m = mass(phi)
    if m <= 0:
        raise ValueError("hot-spot tracking requires positive total mass")
    com = np.array([moment(phi, e) for e in unit_indices(phi.domain.dim)]) / m
    times = np.asarray(times, dtype=float)
    locs, vals, uniq = [], [], []
    first_unique = None
    for t in times:
        f = evolved_field(spec, phi, float(t), support=support)
        loc, value, unique = locate(f)
        locs.append(loc)
        vals.append(value)
        uniq.append(unique)
        if unique and first_unique is None:
            first_unique = float(t)
        if not unique:
            first_unique = None
    locations = np.asarray(locs)
    return HotspotTrack(
        times=times,
        locations=locations if phi.domain.dim == 2 else locations.reshape(-1),
        max_values=np.asarray(vals),
        unique_flags=np.asarray(uniq, dtype=bool),
        center_of_mass=com if phi.domain.dim == 2 else com[0],
        first_unique_time=first_unique,
    )


def hessian_at(spec: KernelSpec, phi: Field, t: float, x,
               support=None) -> np.ndarray:
    """Hessian of the evolved field at a point, by exact-path convolution."""
    dim = phi.domain.dim
    pts = np.asarray(x, dtype=float).reshape(1, -1) if dim == 2 \
        else np.asarray([x], dtype=float)
    out = np.empty((dim, dim))
    for a1 in range(dim):
        for a2 in range(dim):
            alpha = tuple(int(i == a1) + int(i == a2) for i in range(dim))
            out[a1, a2] = convolve_exact(spec, phi, t, alpha=alpha,
                                         eval_points=pts, support=support)[0]
    return out


def check_concavity(spec: KernelSpec, phi: Field, t: float, x=None,
                    support=None) -> tuple[bool, np.ndarray]:
    """True when the Hessian at the hot spot is negative definite."""
    if x is None:
        f = evolved_field(spec, phi, t, support=support)
        x, _, _ = locate(f)
    hess = hessian_at(spec, phi, t, x, support=support)
    eigs = np.linalg.eigvalsh(0.5 * (hess + hess.T))
    return bool(np.all(eigs < 0)), eigs


def hessian_eigenvalue_series(spec: KernelSpec, phi: Field, times,
                              support=None) -> tuple[np.ndarray, np.ndarray]:
    """|largest eigenvalue| of the hot-spot Hessian over time (for rate fits)."""
    times = np.asarray(times, dtype=float)
    out = []
    for t in times:
        f = evolved_field(spec, phi, float(t), support=support)
        x, _, _ = locate(f)
        hess = hessian_at(spec, phi, float(t), x, support=support)
        eigs = np.linalg.eigvalsh(0.5 * (hess + hess.T))
        out.append(float(np.max(np.abs(eigs))))
    return times, np.asarray(out)
