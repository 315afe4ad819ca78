"""Mild-solution solver and the moment-matched approximation hierarchy.

The stepper is an exponential (integrating-factor) predictor-corrector:
the stiff linear part is applied exactly through the Fourier multiplier,
so the step size is limited only by the nonlinearity.  The approximation
hierarchy (base term plus refinements) is rebuilt after the fact from
per-step moment data, using spectral accumulators that replay the exact
trapezoid rule of the discrete scheme, one pass over the step history.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import FracheatError, SmallnessViolationError
from .field import (Domain, Field, MultiIndex, QINF, as_norm_order, lq_norm,
                    mass, moment, multi_indices_up_to, weighted_l1)
from .kernel import KernelSpec
from .moments import PsiProfile, compute_weights, psi_alpha
from .expansion import RateFit, RateSeries, fit_rate
from .semigroup import SemigroupPlan, apply, require_box_validity

BLOWUP_FACTOR = 1e6


@dataclass
class NonlinearProblem:
    """Power nonlinearity |u|^(p-1) u with initial data phi."""

    spec: KernelSpec
    p: float
    phi: Field
    blow_up_demo: bool = False

    def __post_init__(self):
        if self.p <= 1:
            raise ValueError("p must exceed 1")
        if self.decay_exponent <= 1 and not self.blow_up_demo:
            raise ValueError(
                f"source decay exponent N(p-1)/theta = {self.decay_exponent:.3f} <= 1: "
                "no global small-data theory; set blow_up_demo to run anyway")

    @property
    def decay_exponent(self) -> float:
        """N (p - 1) / theta: decay order of the nonlinearity along the flow."""
        return self.spec.dim * (self.p - 1.0) / self.spec.theta

    def source(self, values: np.ndarray) -> np.ndarray:
        return np.abs(values) ** (self.p - 1.0) * values


@dataclass
class Trajectory:
    """Solver output: snapshots on the schedule plus per-step monitors."""

    problem: NonlinearProblem
    times: np.ndarray
    snapshots: list[Field]
    step_times: np.ndarray
    sup_history: np.ndarray      # (1+t)^(N/theta) ||u||_inf, per step
    mass_history: np.ndarray
    source_moments: np.ndarray   # per step, moments of F(u) through the stored order
    moment_order: float
    blew_up: bool = False

    def snapshot_at(self, t: float) -> Field:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, t):
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[i]


def output_schedule(t_first: float, t_end: float, per_decade: int = 14) -> np.ndarray:
    """Log-spaced snapshot times, always including the horizon."""
    n = max(2, int(round(per_decade * math.log10(t_end / t_first))) + 1)
    times = np.geomspace(t_first, t_end, n)
    times[-1] = t_end
    return times


def _step_sequence(dt: float, t_end: float, outputs: np.ndarray):
    """Yield step targets: uniform dt clipped to land on every output time."""
    t = 0.0
    idx = 0
    while t < t_end - 1e-12:
        target = t + dt
        if idx < outputs.size and outputs[idx] <= target + 1e-12:
            target = float(outputs[idx])
            idx += 1
        yield min(target, t_end)
        t = target


def solve_mild(problem: NonlinearProblem, dt: float, t_end: float,
               outputs: np.ndarray | None = None,
               moment_order: float = 2.0,
               plan: SemigroupPlan | None = None,
               monitor_factor: float = 10.0) -> Trajectory:
    """Integrate the mild equation with the exponential predictor-corrector.

    Each step: predictor = S(dt) u + dt S(dt) F(u); corrector = S(dt) u +
    dt/2 [S(dt) F(u) + F(predictor)].  The step shrinks adaptively so that
    ||u||_inf^(p-1) dt stays below 0.1.  A scaled sup-norm monitor aborts
    when the global-decay bound drifts upward (disabled in blow-up demo
    mode); values beyond BLOWUP_FACTOR times the initial sup mark blow-up
    and return the truncated trajectory.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    domain = problem.phi.domain
    if plan is None:
        plan = SemigroupPlan(problem.spec, domain)
    if not problem.blow_up_demo:
        require_box_validity(domain, problem.spec.theta, t_end)
    if outputs is None:
        outputs = output_schedule(min(0.1, t_end / 10.0), t_end)
    outputs = np.asarray(sorted(set(float(t) for t in outputs)))
    n_over_theta = domain.dim / problem.spec.theta
    alphas = multi_indices_up_to(moment_order, domain.dim)
    grid_w = _moment_weights(domain, alphas)

    u = problem.phi.values.copy()
    sup0 = float(np.abs(u).max())
    t = 0.0
    step_times = [0.0]
    sup_hist = [sup0]
    mass_hist = [mass(problem.phi)]
    fvals = problem.source(u)
    source_moms = [grid_w @ fvals.ravel() * domain.cell_volume]
    snap_times = [0.0]
    snaps = [problem.phi.copy()]
    blew_up = False
    monitor_min = math.inf

    for target in _step_sequence(dt, t_end, outputs):
        while t < target - 1e-12:
            sup = float(np.abs(u).max())
            dt_eff = min(target - t, dt)
            if sup > 0:
                dt_eff = min(dt_eff, 0.1 / sup ** (problem.p - 1.0))
            step = dt_eff
            mult = plan.multiplier(step, (0,) * domain.dim).real
            fu = problem.source(u)
            su = np.fft.irfftn(np.fft.rfftn(u) * mult, s=u.shape)
            sfu = np.fft.irfftn(np.fft.rfftn(fu) * mult, s=u.shape)
            pred = su + step * sfu
            u = su + 0.5 * step * (sfu + problem.source(pred))
            t += step
            sup = float(np.abs(u).max()) if np.all(np.isfinite(u)) else math.inf
            scaled = (1.0 + t) ** n_over_theta * sup
            step_times.append(t)
            sup_hist.append(scaled)
            mass_hist.append(float(u.sum()) * domain.cell_volume)
            fu = problem.source(u) if math.isfinite(sup) else np.zeros_like(u)
            source_moms.append(grid_w @ fu.ravel() * domain.cell_volume)
            if sup > BLOWUP_FACTOR * sup0 or not math.isfinite(sup):
                blew_up = True
                break
            if not problem.blow_up_demo and t >= 1.0:
                monitor_min = min(monitor_min, scaled)
                if scaled > monitor_factor * monitor_min:
                    raise SmallnessViolationError(
                        f"scaled sup norm drifted to {scaled:.3e} at t={t:.3g}, "
                        f"{monitor_factor:g} times its running minimum; "
                        "the data is not in the small-data regime")
        if blew_up:
            break
        if np.any(np.isclose(outputs, t, rtol=0, atol=1e-9)):
            snap_times.append(t)
            snaps.append(Field(domain, u.copy()))

    return Trajectory(
        problem=problem,
        times=np.asarray(snap_times),
        snapshots=snaps,
        step_times=np.asarray(step_times),
        sup_history=np.asarray(sup_hist),
        mass_history=np.asarray(mass_hist),
        source_moments=np.asarray(source_moms),
        moment_order=moment_order,
        blew_up=blew_up,
    )


def _moment_weights(domain: Domain, alphas: list[MultiIndex]) -> np.ndarray:
    """Rows of x^alpha over the flattened grid, for cheap per-step moments."""
    g = domain.grid()
    rows = []
    for alpha in alphas:
        w = np.ones(domain.shape)
        for c, a in zip(g, alpha):
            if a:
                w = w * c**a
        rows.append(w.ravel())
    return np.asarray(rows)


def solve_inhomogeneous(spec: KernelSpec, phi: Field, source, dt: float,
                        t_end: float, outputs: np.ndarray | None = None,
                        moment_order: float = 2.0,
                        plan: SemigroupPlan | None = None) -> Trajectory:
    """Mild solution with a prescribed source field source(x-grid, t).

    ``source`` is a callable (grid tuple, t) -> array.  The corrector is
    the exact trapezoid in the source, so the scheme is second order for
    sources continuous in time.
    """
    domain = phi.domain
    if plan is None:
        plan = SemigroupPlan(spec, domain)
    if outputs is None:
        outputs = output_schedule(min(0.1, t_end / 10.0), t_end)
    outputs = np.asarray(sorted(set(float(t) for t in outputs)))
    alphas = multi_indices_up_to(moment_order, domain.dim)
    grid_w = _moment_weights(domain, alphas)
    g = domain.grid()

    u = phi.values.copy()
    t = 0.0
    fu = np.asarray(source(g, 0.0), dtype=float)
    step_times, sup_hist, mass_hist = [0.0], [float(np.abs(u).max())], [mass(phi)]
    source_moms = [grid_w @ fu.ravel() * domain.cell_volume]
    snap_times, snaps = [0.0], [phi.copy()]
    n_over_theta = domain.dim / spec.theta

    for target in _step_sequence(dt, t_end, outputs):
        while t < target - 1e-12:
            step = min(target - t, dt)
            mult = plan.multiplier(step, (0,) * domain.dim).real
            f_now = np.asarray(source(g, t), dtype=float)
            su = np.fft.irfftn(np.fft.rfftn(u) * mult, s=u.shape)
            sf = np.fft.irfftn(np.fft.rfftn(f_now) * mult, s=u.shape)
            f_next = np.asarray(source(g, t + step), dtype=float)
            u = su + 0.5 * step * (sf + f_next)
            t += step
            step_times.append(t)
            sup_hist.append((1.0 + t) ** n_over_theta * float(np.abs(u).max()))
            mass_hist.append(float(u.sum()) * domain.cell_volume)
            source_moms.append(grid_w @ f_next.ravel() * domain.cell_volume)
        if np.any(np.isclose(outputs, t, rtol=0, atol=1e-9)):
            snap_times.append(t)
            snaps.append(Field(domain, u.copy()))

    problem = NonlinearProblem(spec, 2.0, phi, blow_up_demo=True)
    return Trajectory(problem, np.asarray(snap_times), snaps,
                      np.asarray(step_times), np.asarray(sup_hist),
                      np.asarray(mass_hist), np.asarray(source_moms),
                      moment_order)


def source_size(f: Field, t: float, order: float, q, theta: float) -> float:
    """The decay functional: (1+t)^(K/theta) [(1+t)^(N/theta (1-1/q)) ||F||_q + ||F||_1] + |||F|||_K."""
    q = as_norm_order(q)
    qv = math.inf if q is QINF else q
    n_over_theta = f.domain.dim / theta
    growth = (1.0 + t) ** (order / theta)
    return (growth * ((1.0 + t) ** (n_over_theta * (1.0 - 1.0 / qv)) * lq_norm(f, q)
                      + lq_norm(f, 1.0))
            + weighted_l1(f, order))


# -- approximation hierarchy -------------------------------------------------------

def build_approximations(trajectory: Trajectory, profile: PsiProfile,
                         order: float, depth: int,
                         plan: SemigroupPlan | None = None) -> list[list[Field]]:
    """Base approximation and refinements at the snapshot times.

    Level 0: evolved data plus moment-matched atoms of the solver's source
    history.  Level n: previous level plus the Duhamel term of its source
    minus that source's own atom expansion.  All time integrals use the
    solver's step grid and trapezoid weights, replayed through exponential
    accumulators in Fourier space (one pass, exact trapezoid identity).

    Returns [levels][snapshots] aligned with trajectory.times.
    """
    if trajectory.blew_up:
        raise FracheatError("cannot build expansions on a blown-up trajectory")
    problem = trajectory.problem
    domain = problem.phi.domain
    spec = problem.spec
    theta = spec.theta
    if plan is None:
        plan = SemigroupPlan(spec, domain)
    alphas = multi_indices_up_to(order, domain.dim)
    if len(alphas) > trajectory.source_moments.shape[1]:
        raise ValueError("trajectory stored fewer source moments than requested order")
    grid_w = _moment_weights(domain, alphas)
    sym = plan.symbol_base
    shape = domain.shape
    pts = domain.points() if domain.dim == 2 else domain.axis()

    def atom_bundle(mom_row: np.ndarray, s: float) -> np.ndarray:
        """Physical field of moment-weighted atoms at age s."""
        weights = _triangular_solve(profile, alphas, theta, s, mom_row)
        vals = np.zeros(shape)
        for alpha, w in zip(alphas, weights):
            if w != 0.0:
                vals += w * psi_alpha(profile, alpha, theta, s, pts).reshape(shape)
        return vals

    step_times = trajectory.step_times
    n_steps = step_times.size
    snap_index = {round(float(t), 12): i for i, t in enumerate(trajectory.times)}
    phi_hat = np.fft.rfftn(problem.phi.values)

    # accumulators per level: duhamel (levels >= 1) and atom integrals
    atom_acc = [np.zeros_like(phi_hat) for _ in range(depth + 1)]
    duh_acc = [np.zeros_like(phi_hat) for _ in range(depth + 1)]  # index 0 unused
    g_prev = [None] * (depth + 1)   # spectral atom bundles at previous step
    f_prev = [None] * (depth + 1)   # spectral sources at previous step
    out: list[list[Field]] = [[] for _ in range(depth + 1)]

    sup0 = float(np.abs(problem.phi.values).max())
    for i in range(n_steps):
        s = float(step_times[i])
        if i > 0:
            ds = s - float(step_times[i - 1])
            decay = np.exp(-ds * sym)
        evolved_phi_hat = np.exp(-s * sym) * phi_hat
        levels = []
        for lev in range(depth + 1):
            if lev == 0:
                mom_row = trajectory.source_moments[i, :len(alphas)]
                g_now = np.fft.rfftn(atom_bundle(mom_row, s))
                if i > 0:
                    atom_acc[0] = decay * atom_acc[0] \
                        + 0.5 * ds * (decay * g_prev[0] + g_now)
                g_prev[0] = g_now
                u0 = np.fft.irfftn(evolved_phi_hat + atom_acc[0], s=shape)
                levels.append(u0)
            else:
                fsrc = problem.source(levels[lev - 1])
                f_now = np.fft.rfftn(fsrc)
                mom_row = grid_w @ fsrc.ravel() * domain.cell_volume
                g_now = np.fft.rfftn(atom_bundle(mom_row, s))
                if i > 0:
                    duh_acc[lev] = decay * duh_acc[lev] \
                        + 0.5 * ds * (decay * f_prev[lev] + f_now)
                    atom_acc[lev] = decay * atom_acc[lev] \
                        + 0.5 * ds * (decay * g_prev[lev] + g_now)
                f_prev[lev] = f_now
                g_prev[lev] = g_now
                un = levels[0] + np.fft.irfftn(duh_acc[lev] - atom_acc[lev], s=shape)
                levels.append(un)
        key = round(s, 12)
        if key in snap_index:
            for lev in range(depth + 1):
                out[lev].append(Field(domain, levels[lev].copy()))
    for lev, fields in enumerate(out):
        if len(fields) != trajectory.times.size:
            raise FracheatError(f"level {lev} snapshots misaligned with trajectory")
    return out


def _triangular_solve(profile: PsiProfile, alphas, theta: float, s: float,
                      moments_row: np.ndarray) -> np.ndarray:
    """Expansion weights from raw moments (same recursion as compute_weights)."""
    from .moments import cross_moment
    weights = np.zeros(len(alphas))
    for i, alpha in enumerate(alphas):
        value = moments_row[i]
        for jdx in range(i):
            beta = alphas[jdx]
            if weights[jdx] != 0.0 and all(b <= a for b, a in zip(beta, alpha)):
                value -= weights[jdx] * cross_moment(profile, alpha, beta, theta, s)
        weights[i] = value
    return weights


# -- decay measurement ---------------------------------------------------------------

@dataclass
class DecayReport:
    q_fit: RateFit
    weighted_fit: RateFit
    q_series: RateSeries
    weighted_series: RateSeries
    predicted_slope: float
    log_threshold: bool
    exact: bool = False


def approximation_decay(trajectory: Trajectory, approx: list[Field], q,
                        ell: float, order: float,
                        window: tuple[float, float]) -> DecayReport:
    """Fit the decay of u minus one approximation level in L^q and weighted norms.

    The predicted slope follows the piecewise law: the weaker of the
    matched-moment decay and the accumulated-source decay, with the exact
    threshold case flagged (an extra logarithm, not a different power).
    """
    problem = trajectory.problem
    theta = problem.spec.theta
    dim = problem.spec.dim
    q = as_norm_order(q)
    qv = math.inf if q is QINF else q
    times, qvals, wvals = [], [], []
    for t, snap, ap in zip(trajectory.times, trajectory.snapshots, approx):
        if t <= 0:
            continue
        diff = Field(snap.domain, snap.values - ap.values)
        times.append(t)
        qvals.append(lq_norm(diff, q))
        wvals.append(weighted_l1(diff, ell))
    times = np.asarray(times)
    qvals = np.asarray(qvals)
    wvals = np.asarray(wvals)
    if np.all(qvals == 0):
        zero = RateFit(0.0, -math.inf, 1.0, window)
        series = RateSeries(times, np.ones_like(times), "exact zero")
        return DecayReport(zero, zero, series, series, 0.0, False, exact=True)
    a_p = problem.decay_exponent
    q_series = RateSeries(times, qvals, f"q={qv:g}")
    weighted_series = RateSeries(times, np.maximum(wvals, 1e-300), f"ell={ell:g}")
    if np.all(wvals > 0):
        weighted_fit = fit_rate(weighted_series, window)
    else:
        weighted_fit = RateFit(math.nan, math.nan, 0.0, window)
    return DecayReport(
        q_fit=fit_rate(q_series, window),
        weighted_fit=weighted_fit,
        q_series=q_series,
        weighted_series=weighted_series,
        predicted_slope=-(dim / theta) * (1.0 - 1.0 / qv)
        - min(order / theta, a_p - 1.0),
        log_threshold=math.isclose(order / theta, a_p - 1.0),
    )


def predicted_level_slope(problem: NonlinearProblem, level: int, order: float,
                          q) -> tuple[float, bool]:
    """Slope prediction for u - U_level in L^q, with the log-threshold flag."""
    q = as_norm_order(q)
    qv = math.inf if q is QINF else q
    theta = problem.spec.theta
    a_p = problem.decay_exponent
    source_rate = (level + 1) * (a_p - 1.0)
    base = -(problem.spec.dim / theta) * (1.0 - 1.0 / qv)
    return (base - min(order / theta, source_rate),
            math.isclose(order / theta, source_rate))


def linear_flow_domination(trajectory: Trajectory,
                           plan: SemigroupPlan | None = None) -> float:
    """Fitted constant C with |u(t)| <= C S(t)|phi| on the grid, over snapshots."""
    problem = trajectory.problem
    if plan is None:
        plan = SemigroupPlan(problem.spec, problem.phi.domain)
    absphi = Field(problem.phi.domain, np.abs(problem.phi.values))
    worst = 0.0
    for t, snap in zip(trajectory.times, trajectory.snapshots):
        if t <= 0:
            continue
        ref = apply(plan, absphi, t).values
        floor = 1e-10 * ref.max()
        sel = ref > floor
        worst = max(worst, float(np.max(np.abs(snap.values[sel]) / ref[sel])))
    return worst


def integrator_order(problem: NonlinearProblem, dt: float, t_end: float) -> float:
    """Observed convergence order from runs at dt, dt/2 against a dt/8 reference."""
    outputs = np.asarray([t_end])
    sols = {}
    for scale in (1.0, 0.5, 0.125):
        traj = solve_mild(problem, dt * scale, t_end, outputs=outputs,
                          moment_order=0.0)
        sols[scale] = traj.snapshots[-1].values
    e1 = float(np.abs(sols[1.0] - sols[0.125]).max())
    e2 = float(np.abs(sols[0.5] - sols[0.125]).max())
    return math.log2(e1 / e2)


def richardson_mass_limit(trajectory: Trajectory) -> float:
    """Extrapolated limit of the solution mass, assuming a 1/t tail approach."""
    t = trajectory.step_times
    m = trajectory.mass_history
    sel = t >= 0.5 * t[-1]
    if sel.sum() < 2:
        return float(m[-1])
    t1, t2 = t[sel][0], t[-1]
    m1, m2 = m[sel][0], m[-1]
    if abs(1.0 / t1 - 1.0 / t2) < 1e-30:
        return float(m2)
    # m(t) = m_inf - c / t  =>  eliminate c
    return float((m2 / t1 - m1 / t2) / (1.0 / t1 - 1.0 / t2))


# -- checkpoints ------------------------------------------------------------------------

_SNAP_VERSION = 1


def save_trajectory(trajectory: Trajectory, directory,
                    expansion_order: float | None = None) -> None:
    """Binary snapshot dumps plus a plain-text manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    dom = trajectory.problem.phi.domain
    lines = [
        f"dim = {dom.dim}",
        f"halfwidth = {dom.halfwidth!r}",
        f"points_per_dim = {dom.points_per_dim}",
        f"theta = {trajectory.problem.spec.theta!r}",
        f"p = {trajectory.problem.p!r}",
        f"blew_up = {trajectory.blew_up}",
    ]
    if expansion_order is not None:
        lines.append(f"expansion_order = {expansion_order!r}")
    lines.append("times = " + " ".join(repr(float(t)) for t in trajectory.times))
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")
    for i, (t, snap) in enumerate(zip(trajectory.times, trajectory.snapshots)):
        raw = struct.pack("<B", _SNAP_VERSION)
        raw += struct.pack("<q", dom.dim)
        raw += struct.pack("<d", float(t))
        raw += struct.pack("<q", snap.values.size)
        raw += snap.values.astype("<f8").ravel().tobytes()
        (d / f"snapshot_{i:04d}.bin").write_bytes(raw)


def load_snapshots(directory) -> tuple[dict, list[tuple[float, Field]]]:
    """Read back a checkpoint directory; returns (manifest, [(t, field)])."""
    d = Path(directory)
    manifest = {}
    for line in (d / "manifest.txt").read_text().splitlines():
        key, _, value = line.partition(" = ")
        manifest[key.strip()] = value.strip()
    dom = Domain(int(manifest["dim"]), float(manifest["halfwidth"]),
                 int(manifest["points_per_dim"]))
    out = []
    for path in sorted(d.glob("snapshot_*.bin")):
        raw = path.read_bytes()
        off = 0
        (version,) = struct.unpack_from("<B", raw, off); off += 1
        if version != _SNAP_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        (dim,) = struct.unpack_from("<q", raw, off); off += 8
        (t,) = struct.unpack_from("<d", raw, off); off += 8
        (size,) = struct.unpack_from("<q", raw, off); off += 8
        vals = np.frombuffer(raw, dtype="<f8", count=size, offset=off)
        out.append((t, Field(dom, vals.reshape(dom.shape).copy())))
    return manifest, out


def duhamel_oracle(plan: SemigroupPlan, source_field: Field, switch_off: float,
                   t: float, n_nodes: int = 48) -> Field:
    """Independent quadrature of int_0^min(t,s0) S(t-s) g ds for a boxcar-in-time source."""
    from numpy.polynomial.legendre import leggauss
    upper = min(t, switch_off)
    nodes, weights = leggauss(n_nodes)
    s_nodes = 0.5 * upper * (nodes + 1.0)
    w = 0.5 * upper * weights
    vals = np.zeros(plan.domain.shape)
    for s, wi in zip(s_nodes, w):
        vals += wi * apply(plan, source_field, t - s).values
    return Field(plan.domain, vals)
