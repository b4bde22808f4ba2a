"""Cluster prediction from the flux geometry, quantitative bounds, and the
adjudication harness that checks every prediction against simulated
trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

import bisect

from .dynamics import CollisionEvent, Trajectory
from .envelope import (Envelope, RegionDecomposition, check_a4, level_set_params)
from .initial import (Discretization, Flux, QuantileFn, flux_from_slopes,
                      sup_distance, wasserstein1)
from .protocols import Protocol


class PredictionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# closed-form bounds
# ---------------------------------------------------------------------------

def bounded_phi_separation(c0: float, phi_sup: float, t: float) -> float:
    """Separation floor c0 * exp(-|phi|_inf t) between distinct indivisible
    units under a bounded kernel."""
    return c0 * math.exp(-phi_sup * t)


def heavy_tail_contraction(d0: float, phi_floor: float, t: float) -> float:
    """Diameter ceiling d0 * exp(-phi_floor t) inside one linearity interval
    under a heavy-tailed kernel."""
    return d0 * math.exp(-phi_floor * t)


def weak_singular_collapse_time(d0: float, phi_floor: float, c: float, beta: float,
                                big_r: float, m_lo: float, m_hi: float) -> float:
    """Finite collapse deadline for a linearity interval under a weakly
    singular heavy-tailed kernel: exponential contraction brings the image
    inside the singular range by T1, then the singular force closes it."""
    if m_hi <= m_lo:
        raise PredictionError("empty label interval")
    if d0 > big_r:
        if phi_floor <= 0.0:
            raise PredictionError("a positive communication floor is required")
        t1 = math.log(d0 / big_r) / phi_floor
    else:
        t1 = 0.0
    return t1 + big_r ** beta / (c * beta * (m_hi - m_lo))


def supercritical_time_bound(flux: Flux, env: Envelope, component: tuple[float, float],
                             k_interval: tuple[float, float], x0: QuantileFn) -> float:
    """Deadline by which the compact label interval inside a supercritical
    component has collapsed to a point."""
    m_lo, m_hi = component
    lsp = level_set_params(flux, env, component, k_interval)
    x_left = float(x0.eval_right(m_lo)) if m_lo <= -0.5 else float(x0.eval(m_lo))
    width_x = float(x0.eval(m_hi)) - x_left
    return width_x * (m_hi - m_lo) * 2.0 / lsp.h


def flocking_diameter(p: Protocol, d0: float, v_spread: float) -> Optional[float]:
    """Time-uniform support diameter bound via the standard alignment
    functional: the velocity spread pays for diameter growth through the
    kernel primitive.  None when the tail is too thin to guarantee flocking."""
    if v_spread <= 0.0:
        return d0
    if not p.heavy_tailed:
        return None
    target = p.primitive(d0) + v_spread
    hi = max(d0, 1.0)
    for _ in range(400):
        if p.primitive(hi) >= target:
            break
        hi *= 2.0
    else:
        return None
    return float(brentq(lambda s: p.primitive(s) - target, d0, hi, xtol=1e-12))


def eta_for_sigma(p: Protocol, sigma: float, cap: float = 1e12) -> float:
    """Largest eta with int of phi over any window shorter than eta below
    sigma; the worst window straddles the origin, so solve 2 Phi(eta/2) = sigma."""
    if sigma <= 0.0:
        raise PredictionError("sigma must be positive")
    if 2.0 * p.primitive(cap / 2.0) < sigma:
        return cap
    return float(brentq(lambda e: 2.0 * p.primitive(e / 2.0) - sigma, 0.0, cap,
                        xtol=1e-14, rtol=1e-14))


# ---------------------------------------------------------------------------
# prediction records
# ---------------------------------------------------------------------------

NO_CLUSTER = "no_cluster"
FINITE_CLUSTER = "finite_cluster"
INFINITE_CLUSTER = "infinite_cluster"
CONFINED = "confined"
NO_NEW_FINITE_CLUSTER = "no_new_finite_cluster"


@dataclass(frozen=True)
class ClusterVerdict:
    kind: str
    interval: tuple[float, float]
    theorem: str
    closed_left: bool = False
    time_bound: Optional[float] = None
    rate: Optional[float] = None
    note: str = ""


@dataclass(frozen=True)
class SeparationBound:
    """Lower bound on the distance between the images (or barycenters) of two
    tested labels: c0 * exp(-sup_phi t), or a time-independent positive
    constant when sup_phi is None."""

    m_lo: float
    m_hi: float
    unit_lo: tuple[float, float]
    unit_hi: tuple[float, float]
    c0: float
    sup_phi: Optional[float]
    sigma: Optional[float]
    theorem: str


@dataclass(frozen=True)
class Prediction:
    verdicts: tuple[ClusterVerdict, ...]
    separations: tuple[SeparationBound, ...]
    regions: RegionDecomposition
    x0: QuantileFn
    flux: Flux
    env: Envelope
    protocol: Protocol
    d0: float
    dbar: Optional[float]
    phi_floor: Optional[float]
    u_max: float
    assumptions: tuple[str, ...]

    def required_snaps(self) -> list[float]:
        """Labels that finite-N grids must carry so every record is testable."""
        snaps = set()
        for v in self.verdicts:
            snaps.update(v.interval)
        for s in self.separations:
            snaps.update((s.m_lo, s.m_hi))
            snaps.update(s.unit_lo)
            snaps.update(s.unit_hi)
        for a, b in self.regions.sigma_minus:
            snaps.update((a, b))
        for a, b in self.x0.flats():
            snaps.update((a, b))
        return sorted(s for s in snaps if -0.5 < s < 0.5)


def velocity_profile(flux: Flux, x0: QuantileFn, p: Protocol) -> tuple[float, float]:
    """(u_max, velocity spread) sampled at the flux cells."""
    mids = 0.5 * (flux.ms[:-1] + flux.ms[1:])
    xs = np.asarray(x0.eval(mids), dtype=float)
    conv = _conv_from_quantile(p, x0, xs)
    v = flux.slopes() - conv
    return float(np.max(np.abs(v))), float(np.max(v) - np.min(v))


def _conv_from_quantile(p: Protocol, x0: QuantileFn, x: np.ndarray) -> np.ndarray:
    """(Phi * rho)(x) where rho is the push-forward of label measure under X0."""
    out = np.zeros_like(x)
    for s in x0.segments:
        mass = s.m_hi - s.m_lo
        if s.x_hi == s.x_lo:
            out += mass * p.primitive_np(x - s.x_lo)
        else:
            dens = mass / (s.x_hi - s.x_lo)
            out += dens * (p.second_primitive_np(x - s.x_lo)
                           - p.second_primitive_np(x - s.x_hi))
    return out


def quantile_mean(x0: QuantileFn, a: float, b: float) -> float:
    """Exact mean of X0 over the label interval (a, b]."""
    grid = np.unique(np.concatenate([x0.breakpoints(), [a, b]]))
    grid = grid[(grid >= a) & (grid <= b)]
    total = 0.0
    for lo, hi in zip(grid[:-1], grid[1:]):
        total += 0.5 * (float(x0.eval_right(lo)) + float(x0.eval(hi))) * (hi - lo)
    return total / (b - a)


def predict(regions: RegionDecomposition, x0: QuantileFn, flux: Flux, env: Envelope,
            p: Protocol, d0: float,
            k_intervals: Optional[dict] = None,
            test_pairs: Sequence[tuple[float, float]] = ()) -> Prediction:
    """Clustering verdict for every label region, with quantitative bounds.

    Refuses to predict when local convexity fails at a supercritical
    boundary, since every supercritical statement relies on it.
    """
    ok, witnesses = check_a4(flux, regions)
    if not ok:
        raise PredictionError(
            f"flux is not locally convex at supercritical boundary points: {witnesses}")
    u_max, v_spread = velocity_profile(flux, x0, p)
    dbar = flocking_diameter(p, d0, v_spread)
    phi_floor = p.floor_at(dbar) if (dbar is not None and p.heavy_tailed) else None

    verdicts: list[ClusterVerdict] = []
    separations: list[SeparationBound] = []
    assumptions = []
    if p.bounded:
        assumptions.append("bounded")
    if p.heavy_tailed:
        assumptions.append("heavy_tailed")
    if p.singular:
        assumptions.append("weakly_singular")

    for iv in regions.sigma_plus:
        verdicts.append(ClusterVerdict(NO_CLUSTER, iv, "I"))

    k_intervals = dict(k_intervals or {})
    for comp in regions.sigma_minus:
        m_lo, m_hi = comp
        w = m_hi - m_lo
        k_iv = k_intervals.get(comp, (m_lo + 0.25 * w, m_hi - 0.25 * w))
        t_bound = supercritical_time_bound(flux, env, comp, k_iv, x0)
        verdicts.append(ClusterVerdict(FINITE_CLUSTER, k_iv, "II",
                                       closed_left=True, time_bound=t_bound))
        verdicts.append(ClusterVerdict(CONFINED, comp, "confine"))

    runs = env.linear_runs()

    def run_is_critical(run):
        lo, hi, _ = run
        for a, b in list(regions.sigma_zero) + list(regions.sigma_minus):
            if min(hi, b) - max(lo, a) > 0:
                return True
        return False

    critical_runs = [r for r in runs if run_is_critical(r)]

    for lo, hi, _slope in critical_runs:
        if p.heavy_tailed and phi_floor is not None:
            verdicts.append(ClusterVerdict(INFINITE_CLUSTER, (lo, hi), "III.ii",
                                           rate=phi_floor))
            if p.singular:
                c, beta, big_r = p.params
                t_ws = weak_singular_collapse_time(d0, phi_floor, c, beta, big_r, lo, hi)
                verdicts.append(ClusterVerdict(FINITE_CLUSTER, (lo, hi), "III.iii",
                                               time_bound=t_ws))
        if p.bounded:
            covered_zero = [z for z in regions.sigma_zero
                            if min(hi, z[1]) - max(lo, z[0]) > 0]
            for z in covered_zero:
                verdicts.append(ClusterVerdict(NO_NEW_FINITE_CLUSTER, z, "III.i"))

    # separation between consecutive indivisible units inside each critical run
    if p.bounded:
        for lo, hi, _slope in critical_runs:
            units = _units_in(lo, hi, x0, regions)
            for ua, ub in zip(units, units[1:]):
                ma = _unit_label(ua)
                mb = _unit_label(ub)
                c0 = _unit_position(ub, x0) - _unit_position(ua, x0)
                if c0 <= 0.0:
                    continue
                separations.append(SeparationBound(ma, mb, ua, ub, c0,
                                                   p.sup_norm, None, "III.i/5.2"))

    # labels from distinct linearity runs stay separated for all time;
    # automatic records between consecutive critical runs, plus any requested
    # test pairs (e.g. random pairs in a fully subcritical flux)
    const_pairs: list[tuple[float, float]] = []
    for ra, rb in zip(critical_runs, critical_runs[1:]):
        const_pairs.append((_run_label(ra), _run_label(rb)))
    const_pairs.extend((float(a), float(b)) for a, b in test_pairs)
    for ma, mb in const_pairs:
        if not (-0.5 < ma < mb <= 0.5):
            raise PredictionError(f"bad test pair ({ma!r}, {mb!r})")
        separations.append(SeparationBound(ma, mb, (ma, ma), (mb, mb),
                                           float(x0.eval(mb)) - float(x0.eval(ma)),
                                           None, None, "3.7"))

    return Prediction(tuple(verdicts), tuple(separations), regions, x0, flux, env,
                      p, d0, dbar, phi_floor, u_max, tuple(assumptions))


def _units_in(lo: float, hi: float, x0: QuantileFn,
              regions: RegionDecomposition) -> list[tuple[float, float]]:
    """Consecutive indivisible units (supercritical closures first, then
    initial clusters not absorbed by one) covering (lo, hi]."""
    units = [(a, b) for a, b in regions.sigma_minus if lo <= a and b <= hi]
    for a, b in x0.flats():
        if lo <= a and b <= hi and not any(a < cb and b > ca for ca, cb in units):
            units.append((a, b))
    return sorted(units)


def _unit_label(unit: tuple[float, float]) -> float:
    return 0.5 * (unit[0] + unit[1])


def _unit_position(unit: tuple[float, float], x0: QuantileFn) -> float:
    """Initial barycenter of X0 over a unit (its position for atoms)."""
    return quantile_mean(x0, unit[0], unit[1])


def _run_label(run) -> float:
    lo, hi, _ = run
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# empirical clusters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterReport:
    t: float
    clusters: tuple  # (m_lo, m_hi, position, mass) per group of >= 2 particles


def extract_clusters(traj: Trajectory, t: float) -> ClusterReport:
    """Maximal label intervals whose particles share a group at time t."""
    snap = traj.state_at(t)
    theta = traj.disc.theta
    out = []
    for g in range(len(snap.gx)):
        lo, hi = snap.bounds[g], snap.bounds[g + 1]
        if hi - lo >= 2:
            out.append((float(theta[lo]), float(theta[hi]), float(snap.gx[g]),
                        float(theta[hi] - theta[lo])))
    return ClusterReport(t, tuple(out))


def barycenter_r(traj: Trajectory, interval: tuple[float, float], t: float) -> float:
    """Mass-weighted mean position of the particles whose labels fill the
    half-open interval; the interval must align with the label grid."""
    i_lo, i_hi = _particle_range(traj.disc, interval, closed_left=False)
    snap = traj.state_at(t)
    pos = snap.positions()
    w = traj.disc.masses[i_lo:i_hi + 1]
    return float(np.dot(w, pos[i_lo:i_hi + 1]) / w.sum())


def _grid_index(theta: np.ndarray, m: float) -> int:
    i = int(np.searchsorted(theta, m, side="left"))
    if i >= len(theta) or abs(theta[i] - m) > 1e-12:
        raise PredictionError(f"label {m!r} is not snapped into the grid")
    return i


def _particle_range(disc: Discretization, interval: tuple[float, float],
                    closed_left: bool) -> tuple[int, int]:
    """Particle indices [i_lo, i_hi] covering the interval's labels."""
    lo, hi = interval
    i_hi = disc.particle_of(hi)
    if closed_left:
        i_lo = disc.particle_of(lo)
    else:
        i_lo = _grid_index(disc.theta, lo)  # first cell strictly right of lo
        if i_lo > i_hi:
            i_lo = i_hi
    return i_lo, i_hi


# ---------------------------------------------------------------------------
# verification harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerdictRow:
    pred_id: int
    theorem: str
    kind: str
    time: float
    empirical: float
    bound: float
    margin: float
    status: str


_REL_SLACK = 1e-6


def verify(pred: Prediction, trajs: Sequence[Trajectory],
           sample_times: Sequence[float]) -> list[VerdictRow]:
    """Adjudicate every prediction record against the trajectories.

    Bound-type records are checked on the finest discretization with
    multiplicative slack plus an additive allowance for the initial
    discretization error; structural records (no-cluster, confinement) are
    checked on every trajectory.
    """
    if not len(trajs) or not len(pred.verdicts) + len(pred.separations):
        return []
    trajs = sorted(trajs, key=lambda tr: tr.disc.n)
    fine = trajs[-1]
    times = [t for t in sorted(sample_times) if t <= fine.horizon + 1e-12]
    if not times:
        return []
    allowance = sup_distance(fine.quantile_at(0.0), pred.x0)
    rows: list[VerdictRow] = []
    rid = 0

    sim_diam = max(tr.max_diameter() for tr in trajs)
    phi_floor_sim = pred.protocol.floor_at(max(sim_diam, 1e-300)) \
        if pred.protocol.heavy_tailed else None

    for v in pred.verdicts:
        if v.kind == NO_CLUSTER:
            worst = 0
            for tr in trajs:
                for t in times:
                    worst += _count_overlapping(tr, t, v.interval)
            rows.append(_row(rid, v.theorem, v.kind, times[-1], float(worst), 0.0,
                             -float(worst), worst == 0))
        elif v.kind == FINITE_CLUSTER:
            rows.extend(_check_finite_cluster(rid, v, trajs, times))
        elif v.kind == INFINITE_CLUSTER:
            rows.extend(_check_contraction(rid, v, fine, times, pred, allowance,
                                           phi_floor_sim))
        elif v.kind == CONFINED:
            worst = 0
            for tr in trajs:
                for t in times:
                    worst += _count_confinement_violations(tr, t, v.interval)
            rows.append(_row(rid, v.theorem, v.kind, times[-1], float(worst), 0.0,
                             -float(worst), worst == 0))
        elif v.kind == NO_NEW_FINITE_CLUSTER:
            worst = 0
            for tr in trajs:
                for t in times:
                    worst += _count_non_initial_clusters(tr, t, v.interval, pred)
            rows.append(_row(rid, v.theorem, v.kind, times[-1], float(worst), 0.0,
                             -float(worst), worst == 0))
        rid += 1

    for s in pred.separations:
        rows.extend(_check_separation(rid, s, fine, times, pred, allowance))
        rid += 1
    return rows


def _row(rid, theorem, kind, t, empirical, bound, margin, ok) -> VerdictRow:
    return VerdictRow(rid, theorem, kind, t, empirical, bound, margin,
                      "PASS" if ok else "FAIL")


def _count_overlapping(tr: Trajectory, t: float, interval: tuple[float, float]) -> int:
    lo, hi = interval
    rep = extract_clusters(tr, t)
    return sum(1 for (a, b, _x, _m) in rep.clusters if a < hi and b > lo)


def _count_confinement_violations(tr: Trajectory, t: float,
                                  comp: tuple[float, float]) -> int:
    m_lo, m_hi = comp
    rep = extract_clusters(tr, t)
    bad = 0
    for a, b, _x, _m in rep.clusters:
        overlaps = a < m_hi and b > m_lo
        inside = a >= m_lo - 1e-12 and b <= m_hi + 1e-12
        contains = a <= m_lo + 1e-12 and b >= m_hi - 1e-12
        if overlaps and not inside and not contains:
            bad += 1
    return bad


def _count_non_initial_clusters(tr: Trajectory, t: float, run: tuple[float, float],
                                pred: Prediction) -> int:
    lo, hi = run
    rep = extract_clusters(tr, t)
    flats = pred.x0.flats()
    bad = 0
    for a, b, _x, _m in rep.clusters:
        if not (a < hi and b > lo):
            continue
        if any(a >= fa - 1e-12 and b <= fb + 1e-12 for fa, fb in flats):
            continue
        bad += 1
    return bad


def _check_finite_cluster(rid, v: ClusterVerdict, trajs, times) -> list[VerdictRow]:
    rows = []
    bound = float(v.time_bound)
    for tr in trajs:
        i_lo, i_hi = _particle_range(tr.disc, v.interval, v.closed_left)
        merge_t = _collapse_time(tr, i_lo, i_hi)
        if merge_t is not None:
            ok = merge_t <= bound * (1.0 + _REL_SLACK)
            rows.append(_row(rid, v.theorem, v.kind, merge_t, merge_t, bound,
                             bound - merge_t, ok))
        elif tr.horizon >= bound:
            rows.append(_row(rid, v.theorem, v.kind, tr.horizon, math.inf, bound,
                             -math.inf, False))
        else:
            # deadline beyond the simulated horizon: inconclusive
            rows.append(VerdictRow(rid, v.theorem, v.kind, tr.horizon, math.inf,
                                   bound, math.nan, "SKIP"))
    return rows


def _collapse_time(tr: Trajectory, i_lo: int, i_hi: int) -> Optional[float]:
    """First event time after which particles i_lo..i_hi share one group."""
    if i_lo == i_hi:
        return 0.0
    bounds0 = tr.checkpoints[0].bounds
    g_lo = int(np.searchsorted(bounds0, i_lo, side="right")) - 1
    g_hi = int(np.searchsorted(bounds0, i_hi, side="right")) - 1
    if g_lo == g_hi:
        return 0.0
    for ev in sorted(tr.events, key=lambda e: e.t):
        if ev.lo <= i_lo and i_hi < ev.hi:
            return ev.t
    return None


def _check_contraction(rid, v: ClusterVerdict, fine: Trajectory, times, pred,
                       allowance, phi_floor_sim) -> list[VerdictRow]:
    rate = phi_floor_sim if phi_floor_sim is not None else v.rate
    i_lo, i_hi = _particle_range(fine.disc, v.interval, closed_left=False)
    rows = []
    diams = []
    worst_margin = math.inf
    worst_t = times[0]
    for t in times:
        pos = fine.positions_at(t)
        diam = float(pos[i_hi] - pos[i_lo])
        diams.append((t, diam))
        bound = heavy_tail_contraction(pred.d0, rate, t) + allowance
        margin = bound * (1.0 + _REL_SLACK) - diam
        if margin < worst_margin:
            worst_margin = margin
            worst_t = t
    ok = worst_margin >= 0.0
    rows.append(_row(rid, v.theorem, v.kind, worst_t,
                     float(dict(diams)[worst_t]),
                     heavy_tail_contraction(pred.d0, rate, worst_t) + allowance,
                     worst_margin, ok))
    # fitted decay exponent must reach the communication floor (5% slack)
    fit = decay_exponent([(t, d) for t, d in diams])
    if fit is not None:
        ok_fit = fit <= -rate * 0.95
        rows.append(_row(rid, v.theorem, v.kind + "_rate", times[-1], fit,
                         -rate * 0.95, -rate * 0.95 - fit, ok_fit))
    return rows


def decay_exponent(series: Sequence[tuple[float, float]], floor: float = 1e-13,
                   tail_frac: float = 0.0) -> Optional[float]:
    """Least-squares slope of log(value) over time, ignoring collapsed tails;
    ``tail_frac`` restricts the fit to the late-time window (for long-time
    no-decay checks, where transients would pollute a full-range fit)."""
    pts = [(t, v) for t, v in series if v > floor]
    if len(pts) < 3:
        return None
    t_cut = pts[0][0] + tail_frac * (pts[-1][0] - pts[0][0])
    pts = [(t, v) for t, v in pts if t >= t_cut] or pts[-3:]
    if len(pts) < 3:
        return None
    ts = np.array([t for t, _ in pts])
    ys = np.log(np.array([v for _, v in pts]))
    a = np.vstack([ts, np.ones_like(ts)]).T
    slope, _ = np.linalg.lstsq(a, ys, rcond=None)[0]
    return float(slope)


def _check_separation(rid, s: SeparationBound, fine: Trajectory, times, pred,
                      allowance) -> list[VerdictRow]:
    rows = []
    seps = []
    for t in times:
        if s.sup_phi is None:
            a = fine.eval_xn(s.m_lo, t)
            b = fine.eval_xn(s.m_hi, t)
        else:
            a = _unit_value(fine, s.unit_lo, s.m_lo, t)
            b = _unit_value(fine, s.unit_hi, s.m_hi, t)
        seps.append((t, b - a))
    if s.sup_phi is not None:
        worst = math.inf
        worst_t = times[0]
        for t, sep in seps:
            bound = bounded_phi_separation(s.c0, s.sup_phi, t) - allowance
            margin = sep - bound * (1.0 - _REL_SLACK)
            if margin < worst:
                worst, worst_t = margin, t
        rows.append(_row(rid, s.theorem, "separation_exp", worst_t,
                         dict(seps)[worst_t],
                         bounded_phi_separation(s.c0, s.sup_phi, worst_t) - allowance,
                         worst, worst >= 0.0))
        return rows  # exponential-form bounds may decay; no no-decay fit
    else:
        sigma, eta, u_max, gap0 = _grid_sigma_eta(fine, pred, s)
        worst = math.inf
        worst_t = times[0]
        for t, sep in seps:
            bound = max(gap0 - t * u_max, min(t * sigma, eta)) - allowance
            margin = sep - bound * (1.0 - _REL_SLACK)
            if margin < worst:
                worst, worst_t = margin, t
        rows.append(_row(rid, s.theorem, "separation_const", worst_t,
                         dict(seps)[worst_t], max(
                             gap0 - worst_t * u_max,
                             min(worst_t * sigma, eta)) - allowance,
                         worst, worst >= 0.0))
    fit = decay_exponent(seps, tail_frac=2.0 / 3.0)
    if fit is not None:
        ok = fit >= -1e-3
        rows.append(_row(rid, s.theorem, "separation_decay", times[-1], fit,
                         -1e-3, fit + 1e-3, ok))
    return rows


def _unit_value(tr: Trajectory, unit: tuple[float, float], m: float, t: float) -> float:
    a, b = unit
    if b > a:
        return barycenter_r(tr, unit, t)
    return tr.eval_xn(m, t)


def _grid_sigma_eta(tr: Trajectory, pred: Prediction, s: SeparationBound):
    """Discrete separation parameters: envelope secant gap across the tested
    pair, the matching communication window, the velocity ceiling, and the
    initial particle gap."""
    disc = tr.disc
    theta = disc.theta
    env = pred.env
    i = disc.particle_of(s.m_lo)
    j = disc.particle_of(s.m_hi)
    slope_i = (float(env.eval(theta[i + 1])) - float(env.eval(theta[i]))) / disc.masses[i]
    slope_j = (float(env.eval(theta[j + 1])) - float(env.eval(theta[j]))) / disc.masses[j]
    sigma = 0.5 * (slope_j - slope_i)
    if sigma <= 0.0:
        raise PredictionError("tested pair does not straddle distinct linearity runs")
    eta = eta_for_sigma(pred.protocol, sigma)
    u_max = float(np.max(np.abs(disc.v0)))
    gap0 = float(disc.x0[j] - disc.x0[i])
    return sigma, eta, u_max, gap0


# ---------------------------------------------------------------------------
# conservation and structure audits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditReport:
    momentum_drift: float
    max_principle_excess: float
    ordering_violations: int
    stickiness_violations: int
    psi_drift: float
    merge_secant_error: float
    barycentric_margin: float  # >= 0 (up to tolerance) when the inequality holds

    def clean(self, tol_momentum=1e-9, tol_max=1e-9, tol_bary=1e-9) -> bool:
        return (self.momentum_drift <= tol_momentum
                and self.max_principle_excess <= tol_max
                and self.ordering_violations == 0
                and self.stickiness_violations == 0
                and self.barycentric_margin >= -tol_bary)


def audit(traj: Trajectory) -> AuditReport:
    """Scan a trajectory for conservation-law and stickiness violations."""
    masses = traj.disc.masses
    cks = traj.checkpoints
    p0 = float(np.dot(masses, cks[0].velocities()))
    vmax0 = float(np.max(np.abs(cks[0].velocities())))
    momentum = 0.0
    excess = 0.0
    ordering = 0
    sticky = 0
    for a, b in zip(cks, cks[1:]):
        prev = set(a.bounds.tolist())
        if not set(b.bounds.tolist()).issubset(prev):
            sticky += 1
    for c in cks:
        v = c.velocities()
        momentum = max(momentum, abs(float(np.dot(masses, v)) - p0))
        excess = max(excess, float(np.max(np.abs(v))) - vmax0)
        if np.any(np.diff(c.gx) <= 0.0):
            ordering += 1
    psi_drift = _psi_drift(traj)
    secant_err, bary = _event_checks(traj)
    return AuditReport(momentum, max(excess, 0.0), ordering, sticky,
                       psi_drift, secant_err, bary)


def _psi_drift(traj: Trajectory) -> float:
    """Largest per-particle change of psi between consecutive checkpoints with
    no collision in between, plus checkpoint-to-event-precursor drift."""
    worst = 0.0
    cks = traj.checkpoints
    ev_times = sorted(e.t for e in traj.events)
    for a, b in zip(cks, cks[1:]):
        if any(a.t < t <= b.t for t in ev_times):
            continue
        worst = max(worst, float(np.max(np.abs(b.psi() - a.psi()))))
    by_time: dict[float, list[CollisionEvent]] = {}
    for ev in traj.events:
        by_time.setdefault(ev.t, []).append(ev)
    times = [c.t for c in cks]
    for t, evs in by_time.items():
        i = bisect.bisect_left(times, t) - 1
        if i < 0:
            continue
        base = cks[i].psi()
        for ev in evs:
            for lo, hi, _v, psi_pre in ev.parts:
                worst = max(worst, float(np.max(np.abs(base[lo:hi] - psi_pre))))
    return worst


def _event_checks(traj: Trajectory) -> tuple[float, float]:
    """Post-merge psi against the discrete flux secant, and the barycentric
    inequality at every internal split of every event."""
    disc = traj.disc
    a_n = flux_from_slopes(disc.theta, disc.psi0)
    masses = disc.masses
    secant_err = 0.0
    bary_margin = math.inf
    for ev in traj.events:
        th_lo = disc.theta[ev.lo]
        th_hi = disc.theta[ev.hi]
        secant = (float(a_n.eval(th_hi)) - float(a_n.eval(th_lo))) / (th_hi - th_lo)
        secant_err = max(secant_err, abs(ev.psi_post - secant))
        pm = masses[ev.lo:ev.hi]
        ppsi = np.empty(ev.hi - ev.lo)
        for lo, hi, _v, psi_pre in ev.parts:
            ppsi[lo - ev.lo:hi - ev.lo] = psi_pre
        wsum = np.cumsum(pm * ppsi)
        msum = np.cumsum(pm)
        left = wsum[:-1] / msum[:-1]
        right = (wsum[-1] - wsum[:-1]) / (msum[-1] - msum[:-1])
        if len(left):
            bary_margin = min(bary_margin,
                              float(np.min(left - ev.psi_post)),
                              float(np.min(ev.psi_post - right)))
    if bary_margin is math.inf:
        bary_margin = 0.0
    return secant_err, bary_margin


# ---------------------------------------------------------------------------
# self-convergence
# ---------------------------------------------------------------------------

def wasserstein_table(trajs: Sequence[Trajectory], times: Sequence[float]):
    """W1 between consecutive refinements at each sample time."""
    trajs = sorted(trajs, key=lambda tr: tr.disc.n)
    rows = []
    for a, b in zip(trajs, trajs[1:]):
        for t in times:
            w = wasserstein1(a.quantile_at(t), b.quantile_at(t))
            rows.append((a.disc.n, b.disc.n, t, w))
    return rows
