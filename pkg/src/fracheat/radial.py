"""Radial transforms of stable-kernel Fourier multipliers.

Every space/time derivative of the kernel at unit time reduces, per
dimension, to one-dimensional integrals

    dim 1:   (1/pi) * int_0^inf  s^beta exp(-s^theta) {cos,sin}(z s) ds
    dim 2:   (1/2pi) * int_0^inf s^beta exp(-s^theta) J_k(z s) ds

evaluated at z = |x| (times angular factors in dim 2).  This module owns
those integrals.  Strategy:

* moderate z: adaptive-panel Gauss-Legendre quadrature, panels graded
  geometrically toward s = 0 (the weight is not analytic there for
  non-integer theta) and capped at half an oscillation period elsewhere;
* large z: the asymptotic power series obtained by expanding
  exp(-s^theta) and transforming term by term, summed to its first
  non-decreasing term with that term as the error estimate;
* a dense radial table (monotone-cubic interpolation) memoizes the
  quadrature regime; construction runs Richardson-style spot checks of
  the table against direct quadrature and of the series against
  quadrature near the switch radius, and refuses to serve if they fail.

The transforms are read-only after construction.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import PchipInterpolator
from scipy.special import gammaln, jv

from .errors import QuadratureConvergenceError

_GL_NODES = 16
_TABLE_STEP = 2.5e-4
_FAR_STEP = 1e-3
_FAR_LIMIT = 5e4
_TABLE_TOL = 1e-9
_SERIES_TOL = 1e-11
_SWITCH_CANDIDATES = (5.0, 7.0, 10.0, 13.0, 16.0, 20.0, 26.0, 34.0, 45.0, 60.0)


def _sinpi(u: np.ndarray) -> np.ndarray:
    """sin(pi*u), exactly zero at integers (argument reduced before cos/sin)."""
    u = np.asarray(u, dtype=float)
    n = np.round(u)
    return np.sin(np.pi * (u - n)) * np.where(np.mod(n, 2) == 0, 1.0, -1.0)


def _cospi(u: np.ndarray) -> np.ndarray:
    """cos(pi*u), exactly zero at half-integers."""
    return _sinpi(0.5 - np.asarray(u, dtype=float))


def _log_weight_scale(theta: float, beta: float) -> float:
    """log of int_0^inf s^beta exp(-s^theta) ds = Gamma((beta+1)/theta)/theta."""
    return float(gammaln((beta + 1.0) / theta) - math.log(theta))


def _tail_cutoff(theta: float, beta: float, log_tol: float) -> float:
    """Radius beyond which the weight is below exp(log_tol) * integral scale."""
    target = _log_weight_scale(theta, beta) + log_tol
    s = max(2.0, (-target) ** (1.0 / theta))
    for _ in range(60):
        s_new = max(2.0, (beta * math.log(s) - target) ** (1.0 / theta))
        if abs(s_new - s) < 1e-9 * s:
            s = s_new
            break
        s = s_new
    return s


def _breakpoints(theta: float, z_osc: float, r_cut: float) -> np.ndarray:
    """Panel edges on [0, r_cut]: geometric grading near 0, capped lengths above."""
    sigma = min(0.5, 0.25 * r_cut)
    edges = [0.0]
    edges.extend(sigma * 2.0 ** np.arange(-48, 1, dtype=float))
    s = sigma
    half_period = math.pi / z_osc if z_osc > 0 else math.inf
    while s < r_cut:
        smooth_cap = 0.5 * (1.0 + s / 8.0)
        if theta > 1.0 and s >= 1.0:
            smooth_cap = min(smooth_cap, max(0.3, 2.0 / (theta * s ** (theta - 1.0))))
        step = min(half_period, smooth_cap, r_cut - s)
        s += step
        edges.append(s)
    return np.asarray(edges)


def _panel_nodes(edges: np.ndarray, n_gl: int) -> tuple[np.ndarray, np.ndarray]:
    xg, wg = leggauss(n_gl)
    a, b = edges[:-1], edges[1:]
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True)
class TransformKey:
    dim: int
    theta: float
    beta: float
    kind: str | int  # "cos" / "sin" for dim 1, Bessel order for dim 2


class RadialTransform:
    """One radial multiplier transform, callable on arrays of z >= 0."""

    def __init__(self, dim: int, theta: float, beta: float, kind,
                 table_step: float = _TABLE_STEP, table_tol: float = _TABLE_TOL):
        if dim == 1 and kind not in ("cos", "sin"):
            raise ValueError("dim-1 transforms need kind 'cos' or 'sin'")
        if dim == 2 and not (isinstance(kind, (int, np.integer)) and kind >= 0):
            raise ValueError("dim-2 transforms need a nonnegative Bessel order")
        if not 0.0 < theta < 2.0:
            raise ValueError(f"theta must lie in (0, 2), got {theta}")
        if beta < 0:
            raise ValueError("beta must be >= 0")
        self.key = TransformKey(dim, float(theta), float(beta), kind)
        self.table_tol = table_tol
        self._r_cut = _tail_cutoff(theta, beta, math.log(1e-13))
        self.z_switch = self._choose_switch()
        self._build_table(table_step)
        self._spot_check()

    # -- weight and oscillator ------------------------------------------------

    def _weight(self, s: np.ndarray) -> np.ndarray:
        k = self.key
        with np.errstate(divide="ignore"):
            w = np.where(s > 0, np.exp(k.beta * np.log(np.maximum(s, 1e-300))
                                       - s**k.theta), 0.0)
        if k.beta == 0:
            w = np.where(s == 0, 1.0, w)
        return w

    def _osc(self, arg: np.ndarray) -> np.ndarray:
        k = self.key
        if k.dim == 1:
            return np.cos(arg) if k.kind == "cos" else np.sin(arg)
        return jv(int(k.kind), arg)

    # -- direct quadrature ----------------------------------------------------

    def direct(self, z: float, refine: int = 1) -> float:
        """Panel quadrature at one z; refine doubles the panel count."""
        edges = _breakpoints(self.key.theta, z, self._r_cut)
        if refine > 1:
            edges = np.unique(np.concatenate(
                [edges] + [(edges[:-1] + k * np.diff(edges) / refine)
                           for k in range(1, refine)]))
        s, w = _panel_nodes(edges, _GL_NODES)
        return float(np.sum(w * self._weight(s) * self._osc(z * s)))

    # -- asymptotic tail series -----------------------------------------------

    def series(self, z: np.ndarray, max_terms: int = 400) -> tuple[np.ndarray, np.ndarray]:
        """Large-z expansion; returns (values, error estimates).

        Termination logic runs on the phase-free envelope so that phase
        factors hitting exact zeros (integer theta) cannot fake growth.
        """
        k = self.key
        z = np.asarray(z, dtype=float)
        flat = z.reshape(-1)
        total = np.zeros(flat.shape)
        err = np.full(flat.shape, np.inf)
        # index compaction: each pass only touches still-active entries
        idx = np.arange(flat.size)
        logz = np.log(flat)
        prev_env = np.full(flat.shape, np.inf)
        small_count = np.zeros(flat.shape, dtype=int)
        for n in range(max_terms):
            if idx.size == 0:
                break
            lz = logz[idx]
            mu = k.beta + n * k.theta
            if k.dim == 1:
                log_env = gammaln(mu + 1.0) - gammaln(n + 1.0) - (mu + 1.0) * lz
                phase = _cospi((mu + 1.0) / 2.0) if k.kind == "cos" \
                    else _sinpi((mu + 1.0) / 2.0)
            else:
                korder = float(k.kind)
                wpole = (korder + 1.0 - mu) / 2.0
                # 1/Gamma(wpole) through the reflection formula, in logs
                phase = _sinpi(wpole)
                log_env = (mu * math.log(2.0)
                           + gammaln((korder + mu + 1.0) / 2.0)
                           + gammaln(1.0 - wpole) - math.log(math.pi)
                           - gammaln(n + 1.0) - (mu + 1.0) * lz)
            env = np.exp(log_env)
            growing = (n > 2) & (env > prev_env[idx])
            gidx = idx[growing]
            err[gidx] = env[growing]
            keep = ~growing
            idx = idx[keep]
            env = env[keep]
            total[idx] += env * (phase * (-1.0) ** n)
            tiny = env <= _SERIES_TOL * np.abs(total[idx]) + 1e-300
            small_count[idx[tiny]] += 1
            small_count[idx[~tiny]] = 0
            done = small_count[idx] >= 2
            didx = idx[done]
            err[didx] = env[done]
            prev_env[idx] = env
            idx = idx[~done]
        pref = 1.0 / math.pi if k.dim == 1 else 1.0 / (2.0 * math.pi)
        return (pref * total).reshape(z.shape), (pref * err).reshape(z.shape)

    def _choose_switch(self) -> float:
        for cand in _SWITCH_CANDIDATES:
            val, err = self.series(np.array([cand]))
            if err[0] <= 1e-10 * abs(val[0]) + 1e-280:
                return cand
        return _SWITCH_CANDIDATES[-1]

    # -- table ----------------------------------------------------------------

    def _build_table(self, step: float) -> None:
        z_max = 1.2 * self.z_switch
        # The transform varies in z on scale 1/s_eff, where s_eff is the RMS
        # frequency of the weight; the log-spaced grid must resolve that.
        k = self.key
        s_eff = math.sqrt(math.exp(gammaln((k.beta + 3.0) / k.theta)
                                   - gammaln((k.beta + 1.0) / k.theta)))
        s_eff = max(s_eff, 1.0)
        u = np.arange(0.0, math.log1p(z_max * s_eff) + step, step)
        zs = np.expm1(u) / s_eff
        zs[-1] = max(zs[-1], z_max)
        vals = np.empty_like(zs)
        pref = 1.0 / math.pi if self.key.dim == 1 else 1.0 / (2.0 * math.pi)
        hi = zs[-1]
        lo = hi / 2.0
        while True:
            sel = (zs > lo) & (zs <= hi) if lo > 0.6 else (zs <= hi)
            if sel.any():
                s, w = _panel_nodes(
                    _breakpoints(self.key.theta, hi, self._r_cut), _GL_NODES)
                ww = w * self._weight(s)
                zblock = zs[sel]
                out = np.empty(zblock.size)
                chunk = max(1, int(2e6 // max(s.size, 1)))
                for i in range(0, zblock.size, chunk):
                    zb = zblock[i:i + chunk]
                    out[i:i + chunk] = ww @ self._osc(s[:, None] * zb[None, :])
                vals[sel] = pref * out
            if lo <= 0.6:
                break
            hi, lo = lo, lo / 2.0
        self._table_z = zs
        self._table_v = vals
        self._interp = PchipInterpolator(zs, vals, extrapolate=False)
        self.scale = float(np.max(np.abs(vals)))
        # Far table: the asymptotic series sampled on a log grid, so that
        # routine evaluations never pay the per-term series loop.
        fu = np.arange(math.log(self.z_switch), math.log(_FAR_LIMIT) + _FAR_STEP,
                       _FAR_STEP)
        fz = np.exp(fu)
        fv, ferr = self.series(fz)
        if np.any(ferr > 1e-9 * np.abs(fv) + 1e-280):
            raise QuadratureConvergenceError(
                f"tail series not accurate on the far table for {self.key}")
        self.z_far = float(fz[-1])
        self._far_interp = PchipInterpolator(fu, fv, extrapolate=False)

    def _spot_check(self) -> None:
        pref = 1.0 / math.pi if self.key.dim == 1 else 1.0 / (2.0 * math.pi)
        rng = np.random.default_rng(17)
        zmax = self._table_z[-1]
        zs = np.concatenate([[0.0, 1e-3 * zmax], rng.uniform(0, zmax, 7)])
        for z in zs:
            ref = pref * self.direct(float(z), refine=2)
            tol = self.table_tol * (abs(ref) + 1e-2 * self.scale)
            if abs(float(self._interp(z)) - ref) > tol:
                raise QuadratureConvergenceError(
                    f"radial table failed its spot check at z={z:.4g} for {self.key}")
        for z in (self.z_switch, 1.1 * self.z_switch):
            sval, serr = self.series(np.array([z]))
            ref = pref * self.direct(float(z), refine=2)
            if abs(sval[0] - ref) > 100 * self.table_tol * (abs(ref) + 1e-6 * self.scale):
                raise QuadratureConvergenceError(
                    f"tail series disagrees with quadrature at z={z:.4g} for {self.key}")

    # -- evaluation -------------------------------------------------------------

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.empty(z.shape)
        near = z <= self.z_switch
        if near.any():
            out[near] = self._interp(z[near])
        mid = ~near & (z <= self.z_far)
        if mid.any():
            out[mid] = self._far_interp(np.log(z[mid]))
        far = ~near & ~mid
        if far.any():
            vals, errs = self.series(z[far])
            bad = errs > 1e-8 * np.abs(vals) + 1e-280
            if bad.any():
                raise QuadratureConvergenceError(
                    f"tail series not converged at z={z[far][bad][:3]} for {self.key}")
            out[far] = vals
        return out


# -- binary table dump/load -----------------------------------------------------

_FORMAT_VERSION = 1


def dump_table(transform: RadialTransform, path) -> None:
    """Write the radial table: version byte, dim, theta, length, radii, values."""
    buf = io.BytesIO()
    buf.write(struct.pack("<B", _FORMAT_VERSION))
    buf.write(struct.pack("<q", transform.key.dim))
    buf.write(struct.pack("<d", transform.key.theta))
    buf.write(struct.pack("<q", transform._table_z.size))
    buf.write(transform._table_z.astype("<f8").tobytes())
    buf.write(transform._table_v.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class LoadedTable:
    """Interpolation-only view of a dumped radial table."""

    def __init__(self, dim: int, theta: float, radii: np.ndarray, values: np.ndarray):
        self.dim = dim
        self.theta = theta
        self.radii = radii
        self.values = values
        self._interp = PchipInterpolator(radii, values, extrapolate=False)

    def __call__(self, z):
        return self._interp(np.asarray(z, dtype=float))


def load_table(path) -> LoadedTable:
    with open(path, "rb") as fh:
        raw = fh.read()
    off = 0
    (version,) = struct.unpack_from("<B", raw, off); off += 1
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported table format version {version}")
    (dim,) = struct.unpack_from("<q", raw, off); off += 8
    (theta,) = struct.unpack_from("<d", raw, off); off += 8
    (length,) = struct.unpack_from("<q", raw, off); off += 8
    radii = np.frombuffer(raw, dtype="<f8", count=length, offset=off).copy()
    off += 8 * length
    values = np.frombuffer(raw, dtype="<f8", count=length, offset=off).copy()
    return LoadedTable(dim, theta, radii, values)
