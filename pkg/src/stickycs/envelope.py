"""Lower convex envelopes of piecewise-linear fluxes and the derived label
regions (subcritical / critical / supercritical), linearity intervals, and
level-set parameters for collapse-time bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .initial import Flux, QuantileFn

_EPS = np.finfo(float).eps


class RegionError(ValueError):
    pass


@dataclass(frozen=True)
class Tolerances:
    contact: float
    slope: float

    @staticmethod
    def for_flux(flux: Flux, contact_rel: float = 1e-9, slope_rel: float = 1e-9) -> "Tolerances":
        scale = max(1.0, float(np.max(np.abs(flux.values))))
        contact = contact_rel * flux.value_range + 32.0 * _EPS * scale
        slope = slope_rel * max(flux.lipschitz, _EPS) + 32.0 * _EPS * max(1.0, flux.lipschitz)
        return Tolerances(contact, slope)


@dataclass(frozen=True)
class Envelope:
    """Largest convex minorant of a piecewise-linear flux.

    Hull vertices are a subset of the flux breakpoints (collinear vertices
    kept, matching chord dominance); ``values`` carries the envelope at every
    flux breakpoint and ``contact`` the labels where it touches the flux.
    """

    flux: Flux
    hull_ms: np.ndarray
    hull_values: np.ndarray
    values: np.ndarray
    contact: np.ndarray  # bool, per flux breakpoint
    tol: Tolerances

    def eval(self, m):
        return np.interp(m, self.hull_ms, self.hull_values)

    def slopes(self) -> np.ndarray:
        return np.diff(self.hull_values) / np.diff(self.hull_ms)

    def linear_runs(self) -> list[tuple[float, float, float]]:
        """Maximal (m_lo, m_hi, slope) stretches on which the envelope is
        linear up to the slope tolerance."""
        s = self.slopes()
        runs = []
        start = 0
        for i in range(1, len(s)):
            if abs(s[i] - s[start]) > self.tol.slope:
                runs.append((self.hull_ms[start], self.hull_ms[i],
                             float(np.mean(s[start:i]))))
                start = i
        runs.append((self.hull_ms[start], self.hull_ms[-1],
                     float(np.mean(s[start:]))))
        return runs

    def is_subcritical_at(self, m: float) -> bool:
        """True when m sits in a contact cell that subsamples a genuinely
        curving flux (no linear piece of the envelope ends at m)."""
        i = self.flux.cell_of(m)
        return bool(self.flux.curved[i] and self.contact[i] and self.contact[i + 1])


def lower_convex_envelope(flux: Flux, tol: Optional[Tolerances] = None) -> Envelope:
    """Monotone-chain lower hull of the flux breakpoints.

    Valid because the flux is linear between breakpoints, so the envelope of
    the graph equals the envelope of the vertex set.
    """
    ms, vals = flux.ms, flux.values
    if len(ms) < 2:
        raise RegionError("flux needs at least two breakpoints")
    if tol is None:
        tol = Tolerances.for_flux(flux)
    hull: list[int] = []
    for k in range(len(ms)):
        while len(hull) > 1:
            i, j = hull[-2], hull[-1]
            # pop strictly concave turns; collinear vertices stay
            if (vals[j] - vals[i]) * (ms[k] - ms[j]) > (vals[k] - vals[j]) * (ms[j] - ms[i]):
                hull.pop()
            else:
                break
        hull.append(k)
    hull_ms = ms[hull]
    hull_vals = vals[hull]
    env_vals = np.interp(ms, hull_ms, hull_vals)
    contact = (vals - env_vals) <= tol.contact
    return Envelope(flux, hull_ms, hull_vals, env_vals, contact, tol)


def brute_force_envelope(flux: Flux) -> tuple[np.ndarray, np.ndarray]:
    """O(n^2)-style chord-dominance oracle: a vertex survives iff no chord
    over a straddling pair passes strictly below it."""
    ms, vals = flux.ms, flux.values
    n = len(ms)
    lowest = vals.copy()
    for i in range(n - 2):
        dx = ms[i + 1:] - ms[i]
        sl = (vals[i + 1:] - vals[i]) / dx
        # chord (i, j) evaluated at every interior vertex k, i < k < j
        chord = vals[i] + sl[:, None] * (ms[i + 1:] - ms[i])[None, :]
        jj, kk = np.meshgrid(np.arange(len(sl)), np.arange(len(sl)), indexing="ij")
        valid = kk < jj
        masked = np.where(valid, chord, np.inf)
        lowest[i + 1:] = np.minimum(lowest[i + 1:], masked.min(axis=0))
    keep = vals <= lowest
    keep[0] = keep[-1] = True
    return ms[keep], vals[keep]


@dataclass(frozen=True)
class RegionDecomposition:
    """Disjoint label regions; the only labels left out are the right
    endpoints of the supercritical components."""

    sigma_plus: tuple[tuple[float, float], ...]   # half-open (a, b]
    sigma_zero: tuple[tuple[float, float], ...]   # half-open (a, b]
    sigma_minus: tuple[tuple[float, float], ...]  # open (a, b)
    tol: Tolerances
    notes: tuple[str, ...] = ()

    @property
    def boundary_labels(self) -> tuple[float, ...]:
        return tuple(b for _, b in self.sigma_minus)

    def classify(self, m: float) -> str:
        for a, b in self.sigma_minus:
            if a < m < b:
                return "minus"
            if m == b:
                return "boundary"
        for a, b in self.sigma_zero:
            if a < m <= b:
                return "zero"
        for a, b in self.sigma_plus:
            if a < m <= b:
                return "plus"
        raise RegionError(f"label out of domain: {m!r}")

    def component_of(self, m: float) -> Optional[tuple[float, float]]:
        for a, b in self.sigma_minus:
            if a < m < b:
                return (a, b)
        return None


def classify_regions(flux: Flux, env: Envelope,
                     tol: Optional[Tolerances] = None) -> RegionDecomposition:
    """Split (-1/2, 1/2] by contact and linearity structure.

    Supercritical components are the maximal stretches of breakpoints lifted
    off the envelope.  Contact cells become critical runs where the flux is
    structurally linear (constant slope within tolerance) and subcritical
    where they subsample a curving flux.
    """
    if env.flux is not flux and not np.array_equal(env.flux.ms, flux.ms):
        raise RegionError("envelope was computed for a different flux")
    tol = tol or env.tol
    ms = flux.ms
    off = ~env.contact
    n_cell = len(ms) - 1

    minus: list[tuple[float, float]] = []
    i = 1
    while i < len(ms) - 1:
        if off[i]:
            j = i
            while j + 1 < len(ms) - 1 and off[j + 1]:
                j += 1
            if (j - i + 2) < 2:  # component narrower than two grid cells
                raise RegionError(
                    f"supercritical component near m={ms[i]!r} is under-resolved; refine the flux")
            minus.append((float(ms[i - 1]), float(ms[j + 1])))
            i = j + 1
        else:
            i += 1

    slopes = flux.slopes()
    zero: list[tuple[float, float]] = []
    plus: list[tuple[float, float]] = []
    notes: list[str] = []

    def emit(run_start: int, run_end: int, curved: bool) -> None:
        iv = (float(ms[run_start]), float(ms[run_end]))
        (plus if curved else zero).append(iv)

    # walk the contact stretches between supercritical components
    cell_ok = env.contact[:-1] & env.contact[1:]
    c = 0
    while c < n_cell:
        if not cell_ok[c]:
            c += 1
            continue
        start = c
        cur_curved = bool(flux.curved[c])
        ref_slope = slopes[c]
        c += 1
        while c < n_cell and cell_ok[c]:
            same_kind = bool(flux.curved[c]) == cur_curved
            same_slope = abs(slopes[c] - ref_slope) <= tol.slope
            if same_kind and (cur_curved or same_slope):
                c += 1
                continue
            emit(start, c, cur_curved)
            start = c
            cur_curved = bool(flux.curved[c])
            ref_slope = slopes[c]
            c += 1
        emit(start, c, cur_curved)

    # isolated contact vertices flanked by lift-off (flux kink pinned to a
    # linear envelope) get no interval of their own; flag them
    for k in range(1, len(ms) - 1):
        if env.contact[k] and off[k - 1] and off[k + 1]:
            notes.append(f"isolated contact at m={ms[k]!r} splits a supercritical stretch")

    return RegionDecomposition(tuple(plus), tuple(zero), tuple(minus), tol, tuple(notes))


def l_interval(m: float, env: Envelope) -> tuple[float, float]:
    """Maximal half-open interval containing m on which the envelope is
    linear; the singleton (m, m) on the subcritical set."""
    if env.is_subcritical_at(m):
        return (m, m)
    for lo, hi, _ in env.linear_runs():
        if lo < m <= hi:
            return (float(lo), float(hi))
    raise RegionError(f"label out of domain: {m!r}")


def c_interval(m: float, x0: QuantileFn, regions: RegionDecomposition) -> tuple[float, float]:
    """Indivisible unit at m: its initial cluster if one exists, else the
    enclosing supercritical component's half-open closure, else {m}."""
    for a, b in x0.flats():
        if a < m <= b:
            return (float(a), float(b))
    comp = regions.component_of(m)
    if comp is not None:
        return comp
    return (m, m)


def check_a4(flux: Flux, regions: RegionDecomposition,
             max_halvings: int = 20) -> tuple[bool, list[tuple[float, float]]]:
    """Local convexity of the flux at every supercritical boundary point,
    probed over a dyadic shrinking window schedule."""
    witnesses: list[tuple[float, float]] = []
    points = [p for comp in regions.sigma_minus for p in comp]
    slopes = flux.slopes()
    for s in points:
        ok = False
        for k in range(1, max_halvings + 1):
            delta = 0.5 * 2.0 ** (-k)
            lo = max(-0.5, s - delta)
            hi = min(0.5, s + delta)
            # cells with positive-length intersection with [lo, hi]
            i0 = max(int(np.searchsorted(flux.ms, lo, side="right")) - 1, 0)
            i1 = min(int(np.searchsorted(flux.ms, hi, side="left")) - 1, len(slopes) - 1)
            window = slopes[i0:i1 + 1]
            if np.all(np.diff(window) >= -regions.tol.slope):
                ok = True
                break
        if not ok:
            witnesses.append((float(s), float(delta)))
    return (len(witnesses) == 0, witnesses)


@dataclass(frozen=True)
class LevelSetParams:
    """Rescaled flux-gap level geometry on a supercritical component."""

    h0: float
    h: float
    a_h: float  # mass label
    b_h: float  # mass label
    c_h: float


def level_set_params(flux: Flux, env: Envelope, component: tuple[float, float],
                     k_interval: tuple[float, float]) -> LevelSetParams:
    """Level parameters of f = (A - A**) rescaled onto [0, 1] over the
    component, trimmed to its maximal convex flanks.

    h is cut down from h0 = min(f)/2 on the trimmed core just enough for the
    level set [a_h, b_h] to cover ``k_interval``.
    """
    m_lo, m_hi = component
    k_lo, k_hi = k_interval
    width = m_hi - m_lo
    if not (m_lo < k_lo <= k_hi < m_hi):
        raise RegionError("compact interval must sit strictly inside the component")
    sel = (flux.ms >= m_lo) & (flux.ms <= m_hi)
    xs = (flux.ms[sel] - m_lo) / width
    fs = flux.values[sel] - env.values[sel]
    fs[0] = 0.0
    fs[-1] = 0.0
    if np.any(fs[1:-1] <= 0.0):
        raise RegionError("flux gap vanishes inside the component; "
                          "region decomposition and tolerances disagree")
    slopes = np.diff(fs) / np.diff(xs)
    # maximal convex prefix / suffix: slopes[0..p] and slopes[q..] monotone
    p = 0
    while p + 1 < len(slopes) and slopes[p + 1] >= slopes[p]:
        p += 1
    q = len(slopes) - 1
    while q - 1 >= 0 and slopes[q - 1] <= slopes[q]:
        q -= 1
    a0, b0 = xs[p + 1], xs[q]
    if a0 > b0:
        raise RegionError("no convexity-trimmed core; the flux gap is not unimodal enough")
    core = (xs >= a0) & (xs <= b0)
    h0 = 0.5 * float(np.min(fs[core]))
    h = h0
    kx_lo = (k_lo - m_lo) / width
    kx_hi = (k_hi - m_lo) / width
    if kx_lo < a0:
        h = min(h, float(np.interp(kx_lo, xs, fs)))
    if kx_hi > b0:
        h = min(h, float(np.interp(kx_hi, xs, fs)))
    a_h = _cross_increasing(xs[:p + 2], fs[:p + 2], h)
    b_h = _cross_decreasing(xs[q:], fs[q:], h)
    return LevelSetParams(h0, h, m_lo + a_h * width, m_lo + b_h * width, h / width)


def _cross_increasing(xs: np.ndarray, fs: np.ndarray, h: float) -> float:
    """First crossing of level h on a nondecreasing piecewise-linear graph."""
    for i in range(1, len(fs)):
        if fs[i] >= h:
            if fs[i] == fs[i - 1]:
                return float(xs[i])
            t = (h - fs[i - 1]) / (fs[i] - fs[i - 1])
            return float(xs[i - 1] + t * (xs[i] - xs[i - 1]))
    return float(xs[-1])


def _cross_decreasing(xs: np.ndarray, fs: np.ndarray, h: float) -> float:
    """Last crossing of level h on a nonincreasing piecewise-linear graph."""
    for i in range(len(fs) - 1, 0, -1):
        if fs[i - 1] >= h:
            if fs[i] == fs[i - 1]:
                return float(xs[i - 1])
            t = (h - fs[i - 1]) / (fs[i] - fs[i - 1])
            return float(xs[i - 1] + t * (xs[i] - xs[i - 1]))
    return float(xs[0])
