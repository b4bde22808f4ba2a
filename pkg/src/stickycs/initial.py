"""Initial data handling: measures, CDFs, quantile functions, flux.

Admissible initial mass distributions are finite mixtures of point atoms and
uniform blocks (piecewise-linear CDF pieces), each block carrying a linear
velocity profile.  Everything downstream (quantile function, psi-profile,
flux) is then exactly computable, or computable to a controlled knot
tolerance where the flux integrand genuinely curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .protocols import Protocol, pair_prim_sum

MASS_TOL = 1e-12
KNOT_TOL = 1e-10  # max deviation of the stored flux from the true antiderivative

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(7)


class InitialDataError(ValueError):
    pass


@dataclass(frozen=True)
class Atom:
    mass: float
    x: float
    v: float


@dataclass(frozen=True)
class Block:
    """Uniform density block on [x_lo, x_hi] with a linear velocity profile."""

    mass: float
    x_lo: float
    x_hi: float
    u_lo: float
    u_hi: float

    @property
    def density(self) -> float:
        return self.mass / (self.x_hi - self.x_lo)

    def u_at(self, x):
        t = (np.asarray(x, dtype=float) - self.x_lo) / (self.x_hi - self.x_lo)
        return self.u_lo + (self.u_hi - self.u_lo) * t


@dataclass(frozen=True)
class InitialData:
    atoms: tuple[Atom, ...]
    blocks: tuple[Block, ...]

    @property
    def support(self) -> tuple[float, float]:
        lo = math.inf
        hi = -math.inf
        for a in self.atoms:
            lo, hi = min(lo, a.x), max(hi, a.x)
        for b in self.blocks:
            lo, hi = min(lo, b.x_lo), max(hi, b.x_hi)
        return lo, hi

    @property
    def diameter(self) -> float:
        lo, hi = self.support
        return hi - lo

    @property
    def velocity_bound(self) -> float:
        vals = [abs(a.v) for a in self.atoms]
        vals += [abs(b.u_lo) for b in self.blocks] + [abs(b.u_hi) for b in self.blocks]
        return max(vals)


def initial_data(atoms: Sequence[tuple] = (), blocks: Sequence[tuple] = ()) -> InitialData:
    """Validate and normalize raw (mass, x, v) / (mass, xlo, xhi, ulo, uhi) specs."""
    at = [Atom(float(m), float(x), float(v)) for m, x, v in atoms]
    bl = [Block(float(m), float(lo), float(hi), float(ul), float(uh))
          for m, lo, hi, ul, uh in blocks]
    for a in at:
        if a.mass <= 0.0:
            raise InitialDataError(f"atom mass must be positive, got {a.mass}")
    for b in bl:
        if b.mass <= 0.0:
            raise InitialDataError(f"block mass must be positive, got {b.mass}")
        if not b.x_hi > b.x_lo:
            raise InitialDataError("block needs positive width")
    bl.sort(key=lambda b: b.x_lo)
    for b0, b1 in zip(bl, bl[1:]):
        if b1.x_lo < b0.x_hi - 1e-15:
            raise InitialDataError("blocks must not overlap")
    # coincident atoms must share a velocity; collapse them
    at.sort(key=lambda a: a.x)
    merged: list[Atom] = []
    for a in at:
        if merged and a.x == merged[-1].x:
            prev = merged[-1]
            if abs(prev.v - a.v) > 1e-12 * max(1.0, abs(prev.v), abs(a.v)):
                raise InitialDataError("coincident atoms must have equal velocities")
            merged[-1] = Atom(prev.mass + a.mass, prev.x, prev.v)
        else:
            merged.append(a)
    total = math.fsum([a.mass for a in merged] + [b.mass for b in bl])
    if abs(total - 1.0) > MASS_TOL:
        raise InitialDataError(f"total mass must be 1, got {total!r}")
    if not merged and not bl:
        raise InitialDataError("empty initial data")
    return InitialData(tuple(merged), tuple(bl))


# ---------------------------------------------------------------------------
# CDF and its generalized inverse
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cdf:
    """Right-continuous CDF shifted to land in [-1/2, 1/2].

    Between breakpoints xs[k] and xs[k+1] the CDF runs linearly from
    m_right[k] to m_left[k+1]; a jump at xs[k] lifts m_left[k] to m_right[k].
    """

    xs: np.ndarray
    m_left: np.ndarray
    m_right: np.ndarray

    def eval(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.xs, x, side="right") - 1
        out = np.full(x.shape, -0.5)
        inside = idx >= 0
        i = np.clip(idx, 0, len(self.xs) - 1)
        nxt = np.clip(i + 1, 0, len(self.xs) - 1)
        width = self.xs[nxt] - self.xs[i]
        frac = np.zeros_like(out)
        np.divide(x - self.xs[i], width, out=frac, where=width > 0)
        lin = self.m_right[i] + (self.m_left[nxt] - self.m_right[i]) * np.clip(frac, 0.0, 1.0)
        out = np.where(inside, np.where(i == len(self.xs) - 1, self.m_right[-1], lin), out)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class QSegment:
    m_lo: float
    m_hi: float
    x_lo: float
    x_hi: float
    kind: str            # "atom" | "block"
    ref: int             # index into data.atoms / data.blocks


@dataclass(frozen=True)
class QuantileFn:
    """Left-continuous generalized inverse on (-1/2, 1/2]."""

    segments: tuple[QSegment, ...]
    _m_lo: np.ndarray = field(repr=False, default=None)
    _m_hi: np.ndarray = field(repr=False, default=None)
    _x_lo: np.ndarray = field(repr=False, default=None)
    _x_hi: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "_m_lo", np.array([s.m_lo for s in self.segments]))
        object.__setattr__(self, "_m_hi", np.array([s.m_hi for s in self.segments]))
        object.__setattr__(self, "_x_lo", np.array([s.x_lo for s in self.segments]))
        object.__setattr__(self, "_x_hi", np.array([s.x_hi for s in self.segments]))

    @property
    def x_min(self) -> float:
        return self.segments[0].x_lo

    @property
    def x_max(self) -> float:
        return self.segments[-1].x_hi

    def _interp(self, m, idx, empty_frac: float):
        lo = self._m_lo[idx]
        width = self._m_hi[idx] - lo
        frac = np.full(np.shape(m), empty_frac)
        np.divide(m - lo, width, out=frac, where=width > 0)
        out = self._x_lo[idx] + (self._x_hi[idx] - self._x_lo[idx]) * np.clip(frac, 0.0, 1.0)
        return out if out.ndim else float(out)

    def eval(self, m):
        """X(m) for m in (-1/2, 1/2]; left-continuous."""
        m = np.asarray(m, dtype=float)
        idx = np.minimum(np.searchsorted(self._m_hi, m, side="left"),
                         len(self.segments) - 1)
        return self._interp(m, idx, 1.0)

    def eval_right(self, m):
        """Right limit X(m+)."""
        m = np.asarray(m, dtype=float)
        idx = np.minimum(np.searchsorted(self._m_hi, m, side="right"),
                         len(self.segments) - 1)
        return self._interp(m, idx, 0.0)

    def flats(self) -> list[tuple[float, float]]:
        """Maximal label intervals (m_lo, m_hi] on which X is constant
        (the initial clusters)."""
        return [(s.m_lo, s.m_hi) for s in self.segments if s.kind == "atom"]

    def breakpoints(self) -> np.ndarray:
        ms = [self.segments[0].m_lo] + [s.m_hi for s in self.segments]
        return np.array(ms)


def build_cdf(data: InitialData) -> Cdf:
    """Exact CDF of the atom + uniform-block measure, M(x) = rho((-inf, x]) - 1/2."""
    xs = sorted({a.x for a in data.atoms} | {b.x_lo for b in data.blocks}
                | {b.x_hi for b in data.blocks})
    xs = np.array(xs)
    atom_mass = {a.x: a.mass for a in data.atoms}
    m_left = np.empty_like(xs)
    m_right = np.empty_like(xs)
    cum = -0.5
    for k, x in enumerate(xs):
        if k > 0:
            dens = 0.0
            mid = 0.5 * (xs[k - 1] + x)
            for b in data.blocks:
                if b.x_lo <= mid <= b.x_hi:
                    dens = b.density
                    break
            cum += dens * (x - xs[k - 1])
        m_left[k] = cum
        cum += atom_mass.get(float(x), 0.0)
        m_right[k] = cum
    # absorb <= MASS_TOL rounding drift at the top end
    m_right[-1] = 0.5
    m_left[0] = -0.5
    return Cdf(xs, m_left, m_right)


def generalized_inverse(cdf: Cdf) -> QuantileFn:
    """Left-continuous quantile function; constant across atom jumps, jumping
    across vacuum gaps."""
    segs: list[QSegment] = []
    n = len(cdf.xs)
    for k in range(n):
        if cdf.m_right[k] > cdf.m_left[k]:
            segs.append(QSegment(cdf.m_left[k], cdf.m_right[k],
                                 cdf.xs[k], cdf.xs[k], "atom", -1))
        if k + 1 < n and cdf.m_left[k + 1] > cdf.m_right[k]:
            segs.append(QSegment(cdf.m_right[k], cdf.m_left[k + 1],
                                 cdf.xs[k], cdf.xs[k + 1], "block", -1))
    return QuantileFn(tuple(segs))


def quantile_from_data(data: InitialData) -> QuantileFn:
    """generalized_inverse(build_cdf(data)) with atom/block back-references
    resolved, which the flux builder uses."""
    q = generalized_inverse(build_cdf(data))
    atom_by_x = {a.x: i for i, a in enumerate(data.atoms)}
    segs = []
    for s in q.segments:
        if s.kind == "atom":
            segs.append(QSegment(s.m_lo, s.m_hi, s.x_lo, s.x_hi, "atom",
                                 atom_by_x[s.x_lo]))
        else:
            ref = -1
            mid = 0.5 * (s.x_lo + s.x_hi)
            for i, b in enumerate(data.blocks):
                if b.x_lo <= mid <= b.x_hi:
                    ref = i
                    break
            segs.append(QSegment(s.m_lo, s.m_hi, s.x_lo, s.x_hi, "block", ref))
    return QuantileFn(tuple(segs))


def quantile_from_particles(theta: np.ndarray, positions: np.ndarray) -> QuantileFn:
    """Step quantile function of an atomic empirical measure on a label grid."""
    segs = [QSegment(theta[i], theta[i + 1], positions[i], positions[i], "atom", i)
            for i in range(len(positions))]
    return QuantileFn(tuple(segs))


# ---------------------------------------------------------------------------
# psi-profile and flux
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Psi0:
    """psi(x) = u(x) + (Phi * rho)(x) on the support of the measure."""

    data: InitialData
    protocol: Protocol

    def conv(self, x) -> np.ndarray:
        """(Phi * rho)(x), exact via primitives of the kernel."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        p = self.protocol
        for a in self.data.atoms:
            out = out + a.mass * p.primitive_np(x - a.x)
        for b in self.data.blocks:
            out = out + b.density * (p.second_primitive_np(x - b.x_lo)
                                     - p.second_primitive_np(x - b.x_hi))
        return out if out.ndim else float(out)

    def at_atom(self, i: int) -> float:
        a = self.data.atoms[i]
        return a.v + float(self.conv(a.x))

    def in_block(self, i: int, x) -> np.ndarray:
        b = self.data.blocks[i]
        return b.u_at(x) + self.conv(x)

    def eval(self, x) -> float:
        """Generic evaluation at a support point (block value if inside a
        block, else the atom value)."""
        for i, b in enumerate(self.data.blocks):
            if b.x_lo <= x <= b.x_hi:
                return float(self.in_block(i, x))
        for i, a in enumerate(self.data.atoms):
            if x == a.x:
                return self.at_atom(i)
        raise InitialDataError(f"velocity profile undefined off the support: x={x!r}")


def build_psi0(data: InitialData, protocol: Protocol) -> Psi0:
    return Psi0(data, protocol)


@dataclass(frozen=True)
class Flux:
    """Piecewise-linear flux on [-1/2, 1/2], A(-1/2) = 0.

    ``curved`` marks cells that subsample a genuinely curving antiderivative
    (knot-insertion artifacts); structurally linear cells (atoms, constant
    integrand pieces) stay unmarked.  Classification relies on the
    distinction.
    """

    ms: np.ndarray
    values: np.ndarray
    curved: np.ndarray  # bool, per cell

    def eval(self, m):
        return np.interp(m, self.ms, self.values)

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.ms)

    @property
    def lipschitz(self) -> float:
        return float(np.max(np.abs(self.slopes())))

    @property
    def value_range(self) -> float:
        return float(np.max(self.values) - np.min(self.values))

    def cell_of(self, m: float) -> int:
        """Index of the cell (ms[i], ms[i+1]] containing m."""
        i = int(np.searchsorted(self.ms, m, side="left")) - 1
        return min(max(i, 0), len(self.ms) - 2)


def flux_from_slopes(theta: np.ndarray, psi: np.ndarray,
                     curved: Optional[np.ndarray] = None) -> Flux:
    """Assemble a flux from per-cell slopes on a label grid."""
    vals = np.concatenate([[0.0], np.cumsum(np.diff(theta) * psi)])
    if curved is None:
        curved = np.zeros(len(theta) - 1, dtype=bool)
    return Flux(np.asarray(theta, dtype=float), vals, curved)


def build_flux(psi0: Psi0, x0: QuantileFn, knot_tol: float = KNOT_TOL) -> Flux:
    """Antiderivative of psi0 o X0 over mass labels.

    Atom segments integrate exactly.  Block segments are refined until the
    piecewise-linear interpolant deviates from the true antiderivative by at
    most ``knot_tol``; cells whose integrand is flat to within the slope
    tolerance stay unmarked so classification can treat them as genuinely
    linear.
    """
    # global integrand scale, for the flat-cell threshold
    probe = []
    for s in x0.segments:
        if s.kind == "atom":
            probe.append(psi0.at_atom(s.ref))
        else:
            xs = np.linspace(s.x_lo, s.x_hi, 9)
            probe.extend(np.atleast_1d(psi0.in_block(s.ref, xs)))
    g_scale = max(1e-300, float(np.max(np.abs(probe))))
    flat_tol = 1e-9 * g_scale

    knots = [-0.5]
    integrals: list[float] = []
    curved: list[bool] = []
    for s in x0.segments:
        if s.kind == "atom":
            knots.append(s.m_hi)
            integrals.append((s.m_hi - s.m_lo) * psi0.at_atom(s.ref))
            curved.append(False)
            continue
        cells = _refine_block(psi0, s, knot_tol, flat_tol)
        for a, b, integral, is_flat in cells:
            knots.append(b)
            integrals.append(integral)
            curved.append(not is_flat)
    ms = np.array(knots)
    vals = np.concatenate([[0.0], np.cumsum(integrals)])
    return Flux(ms, vals, np.array(curved, dtype=bool))


def _refine_block(psi0: Psi0, seg: QSegment, knot_tol: float, flat_tol: float):
    """Adaptively split one block's label interval; returns
    (m_lo, m_hi, integral, is_flat) per final cell, ordered."""

    def x_of(m):
        t = (m - seg.m_lo) / (seg.m_hi - seg.m_lo)
        return seg.x_lo + (seg.x_hi - seg.x_lo) * t

    def g_of(m):
        return np.atleast_1d(psi0.in_block(seg.ref, x_of(m)))

    pending = [(seg.m_lo, seg.m_hi)]
    done = []
    depth = 0
    while pending and depth < 44:
        a = np.array([c[0] for c in pending])
        b = np.array([c[1] for c in pending])
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        gv = g_of(nodes.ravel()).reshape(nodes.shape)
        integral = (gv * _GL_WEIGHTS[None, :]).sum(axis=1) * half
        ga = g_of(a)
        gb = g_of(b)
        spread = np.maximum(gv.max(axis=1), np.maximum(ga, gb)) \
            - np.minimum(gv.min(axis=1), np.minimum(ga, gb))
        # chord deviation of the antiderivative on a cell is at most
        # width * oscillation(g) / 4
        dev = 0.25 * (b - a) * spread
        ok = dev <= knot_tol
        for i in np.nonzero(ok)[0]:
            done.append((a[i], b[i], integral[i], spread[i] <= flat_tol))
        nxt = []
        for i in np.nonzero(~ok)[0]:
            m = mid[i]
            nxt.append((a[i], m))
            nxt.append((m, b[i]))
        pending = nxt
        depth += 1
    for a, b in pending:  # depth cap reached; accept as curved
        gv = g_of(np.array([a, 0.5 * (a + b), b]))
        done.append((a, b, float(gv[1]) * (b - a), False))
    done.sort(key=lambda c: c[0])
    return done


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Discretization:
    """Particle initial data on a label grid theta_0 < ... < theta_N."""

    theta: np.ndarray
    masses: np.ndarray
    x0: np.ndarray
    psi0: np.ndarray
    v0: np.ndarray
    protocol: Protocol

    @property
    def n(self) -> int:
        return len(self.masses)

    def particle_of(self, m: float) -> int:
        """Particle index whose label cell (theta_i, theta_{i+1}] contains m."""
        if not (-0.5 < m <= 0.5 + 1e-12):
            raise InitialDataError(f"mass label out of range: {m!r}")
        i = int(np.searchsorted(self.theta, m, side="left")) - 1
        return min(max(i, 0), self.n - 1)


def label_grid(n: int, snap: Sequence[float] = ()) -> np.ndarray:
    """Uniform n-cell partition of [-1/2, 1/2] with snap labels inserted."""
    if n < 1:
        raise InitialDataError("particle count must be >= 1")
    base = -0.5 + np.arange(n + 1) / n
    base[-1] = 0.5
    extra = np.asarray(sorted(set(float(s) for s in snap)), dtype=float)
    if extra.size:
        if np.any(extra <= -0.5) or np.any(extra >= 0.5):
            raise InitialDataError("snap labels must lie strictly inside (-1/2, 1/2)")
    return np.unique(np.concatenate([base, extra]))


def discretize(data: InitialData, protocol: Protocol, n: int,
               snap: Sequence[float] = (), *,
               flux: Optional[Flux] = None,
               x0: Optional[QuantileFn] = None) -> Discretization:
    """Particle data on the uniform-plus-snaps grid.

    Positions sample the quantile function at the grid labels; per-cell psi
    values are flux slopes, and velocities subtract the kernel-primitive
    convolution so that psi is reproduced by the particle state.
    """
    if x0 is None:
        x0 = quantile_from_data(data)
    if flux is None:
        flux = build_flux(build_psi0(data, protocol), x0)
    theta = label_grid(n, snap)
    masses = np.diff(theta)
    xs = np.asarray(x0.eval(theta[1:]), dtype=float)
    a_vals = flux.eval(theta)
    psi = np.diff(a_vals) / masses
    # subtract the particle-level primitive sum, so the particle system
    # reproduces psi exactly
    conv = pair_prim_sum(protocol, masses, xs)
    v = psi - conv
    # coincident particles (atoms spanning several cells) share a velocity
    k = 0
    while k < len(xs):
        j = k
        while j + 1 < len(xs) and xs[j + 1] == xs[k]:
            j += 1
        if j > k:
            block = slice(k, j + 1)
            vmean = float(np.dot(masses[block], v[block]) / masses[block].sum())
            if np.max(np.abs(v[block] - vmean)) > 1e-8 * max(1.0, abs(vmean)):
                raise InitialDataError("coincident particles disagree on velocity")
            v[block] = vmean
        k = j + 1
    return Discretization(theta, masses, xs, psi, v, protocol)


def atom_label_boundaries(data: InitialData) -> np.ndarray:
    """Cumulative-mass labels of a purely atomic measure (the natural grid).

    Taken from the quantile segments so the labels agree bitwise with
    quantile evaluation.
    """
    if data.blocks:
        raise InitialDataError("atom boundaries are only defined for atomic data")
    return quantile_from_data(data).breakpoints()


def discretize_atomic(data: InitialData, protocol: Protocol) -> Discretization:
    """Discretization matching an atomic measure exactly (one particle per atom)."""
    theta = atom_label_boundaries(data)
    return discretize(data, protocol, 1, snap=theta[1:-1])


# ---------------------------------------------------------------------------
# distances between quantile functions
# ---------------------------------------------------------------------------

def _merged_grid(xa: QuantileFn, xb: QuantileFn) -> np.ndarray:
    pts = np.unique(np.concatenate([xa.breakpoints(), xb.breakpoints()]))
    return pts[(pts >= -0.5) & (pts <= 0.5)]


def wasserstein1(xa: QuantileFn, xb: QuantileFn) -> float:
    """Exact L1 distance between two piecewise-linear quantile functions
    (the Wasserstein-1 distance between the underlying measures)."""
    grid = _merged_grid(xa, xb)
    lo, hi = grid[:-1], grid[1:]
    w = hi - lo
    d_lo = np.asarray(xa.eval_right(lo)) - np.asarray(xb.eval_right(lo))
    d_hi = np.asarray(xa.eval(hi)) - np.asarray(xb.eval(hi))
    same = d_lo * d_hi >= 0.0
    trap = 0.5 * np.abs(d_lo + d_hi) * w
    denom = np.where(same, 1.0, d_lo - d_hi)
    t = d_lo / denom
    cross = 0.5 * w * (np.abs(d_lo) * t + np.abs(d_hi) * (1.0 - t))
    return float(np.sum(np.where(same, trap, cross) * (w > 0)))


def sup_distance(xa: QuantileFn, xb: QuantileFn) -> float:
    """sup |X_a - X_b| over (-1/2, 1/2]; attained at merged breakpoints."""
    grid = _merged_grid(xa, xb)
    left = np.abs(np.asarray(xa.eval(grid[1:])) - np.asarray(xb.eval(grid[1:])))
    right = np.abs(np.asarray(xa.eval_right(grid[:-1]))
                   - np.asarray(xb.eval_right(grid[:-1])))
    return float(max(left.max(initial=0.0), right.max(initial=0.0)))
