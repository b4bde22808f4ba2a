"""Communication kernels for the alignment interaction.

A kernel phi is nonnegative, even, and radially nonincreasing.  Each
protocol also exposes its primitive Phi(x) = int_0^x phi(r) dr (odd) and
the second primitive Psi(x) = int_0^x Phi(s) ds (even), which make pair
forces and convolutions against uniform density blocks exactly computable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

# kind ids shared with the compiled kernels
KIND_ZERO = 0
KIND_CONSTANT = 1
KIND_INVERSE_LINEAR = 2
KIND_WEAKLY_SINGULAR = 3
KIND_CUSTOM = 4

_KIND_NAMES = {
    KIND_ZERO: "zero",
    KIND_CONSTANT: "constant",
    KIND_INVERSE_LINEAR: "inverse_linear",
    KIND_WEAKLY_SINGULAR: "weakly_singular",
    KIND_CUSTOM: "custom",
}

QUAD_TOL = 1e-12


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Protocol:
    """Immutable kernel description; safe to share across runs."""

    kind: int
    params: tuple = ()
    heavy_tailed: bool = False
    sup_norm: Optional[float] = None  # None means unbounded
    phi_fn: Optional[Callable[[float], float]] = None  # custom phi(|r|)
    prim_fn: Optional[Callable[[float], float]] = None  # custom Phi(x), x >= 0

    # -- scalar evaluations -------------------------------------------------

    def phi(self, r: float) -> float:
        """Kernel value at separation r (even in r)."""
        a = abs(r)
        k = self.kind
        if k == KIND_ZERO:
            return 0.0
        if k == KIND_CONSTANT:
            return self.params[0]
        if k == KIND_INVERSE_LINEAR:
            return self.params[0] / (1.0 + a)
        if k == KIND_WEAKLY_SINGULAR:
            c, beta, big_r = self.params
            if a == 0.0:
                return math.inf
            if a < big_r:
                return c * a ** (-beta)
            return c * big_r ** (-beta) / (1.0 + (a - big_r))
        return float(self.phi_fn(a))

    def primitive(self, x: float) -> float:
        """Phi(x) = int_0^x phi; odd in x."""
        a = abs(x)
        s = math.copysign(1.0, x) if x != 0.0 else 0.0
        k = self.kind
        if k == KIND_ZERO:
            return 0.0
        if k == KIND_CONSTANT:
            return s * self.params[0] * a
        if k == KIND_INVERSE_LINEAR:
            return s * self.params[0] * math.log1p(a)
        if k == KIND_WEAKLY_SINGULAR:
            c, beta, big_r = self.params
            if a <= big_r:
                return s * c * a ** (1.0 - beta) / (1.0 - beta)
            head = c * big_r ** (1.0 - beta) / (1.0 - beta)
            return s * (head + c * big_r ** (-beta) * math.log1p(a - big_r))
        if self.prim_fn is not None:
            return s * float(self.prim_fn(a))
        if a == 0.0:
            return 0.0
        val, err = quad(self.phi, 0.0, a, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
        if err > 1e-9 * max(1.0, abs(val)):
            raise ProtocolError(
                f"quadrature for the kernel primitive did not converge at x={x!r}"
            )
        return s * val

    def second_primitive(self, x: float) -> float:
        """Psi(x) = int_0^x Phi; even in x.  Used for block convolutions."""
        a = abs(x)
        k = self.kind
        if k == KIND_ZERO:
            return 0.0
        if k == KIND_CONSTANT:
            return 0.5 * self.params[0] * a * a
        if k == KIND_INVERSE_LINEAR:
            return self.params[0] * ((1.0 + a) * math.log1p(a) - a)
        if k == KIND_WEAKLY_SINGULAR:
            c, beta, big_r = self.params
            if a <= big_r:
                return c * a ** (2.0 - beta) / ((1.0 - beta) * (2.0 - beta))
            psi_r = c * big_r ** (2.0 - beta) / ((1.0 - beta) * (2.0 - beta))
            phi_r = c * big_r ** (1.0 - beta) / (1.0 - beta)
            u = a - big_r
            tail = c * big_r ** (-beta) * ((1.0 + u) * math.log1p(u) - u)
            return psi_r + phi_r * u + tail
        val, err = quad(self.primitive, 0.0, a, epsabs=QUAD_TOL, epsrel=QUAD_TOL,
                        limit=200)
        if err > 1e-9 * max(1.0, abs(val)):
            raise ProtocolError("quadrature for the second primitive did not converge")
        return val

    # -- vectorized evaluations ---------------------------------------------

    def phi_np(self, r: np.ndarray) -> np.ndarray:
        a = np.abs(np.asarray(r, dtype=float))
        k = self.kind
        if k == KIND_ZERO:
            return np.zeros_like(a)
        if k == KIND_CONSTANT:
            return np.full_like(a, self.params[0])
        if k == KIND_INVERSE_LINEAR:
            return self.params[0] / (1.0 + a)
        if k == KIND_WEAKLY_SINGULAR:
            c, beta, big_r = self.params
            with np.errstate(divide="ignore"):
                out = np.where(
                    a < big_r,
                    c * a ** (-beta),
                    c * big_r ** (-beta) / (1.0 + np.maximum(a - big_r, 0.0)),
                )
            return out
        return np.vectorize(self.phi, otypes=[float])(a)

    def primitive_np(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a = np.abs(x)
        s = np.sign(x)
        k = self.kind
        if k == KIND_ZERO:
            return np.zeros_like(a)
        if k == KIND_CONSTANT:
            return s * self.params[0] * a
        if k == KIND_INVERSE_LINEAR:
            return s * self.params[0] * np.log1p(a)
        if k == KIND_WEAKLY_SINGULAR:
            c, beta, big_r = self.params
            head = c * np.minimum(a, big_r) ** (1.0 - beta) / (1.0 - beta)
            tail = c * big_r ** (-beta) * np.log1p(np.maximum(a - big_r, 0.0))
            return s * (head + tail)
        return np.vectorize(self.primitive, otypes=[float])(x)

    def second_primitive_np(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a = np.abs(x)
        k = self.kind
        if k == KIND_ZERO:
            return np.zeros_like(a)
        if k == KIND_CONSTANT:
            return 0.5 * self.params[0] * a * a
        if k == KIND_INVERSE_LINEAR:
            return self.params[0] * ((1.0 + a) * np.log1p(a) - a)
        if k == KIND_WEAKLY_SINGULAR:
            c, beta, big_r = self.params
            head = c * np.minimum(a, big_r) ** (2.0 - beta) / ((1.0 - beta) * (2.0 - beta))
            phi_r = c * big_r ** (1.0 - beta) / (1.0 - beta)
            u = np.maximum(a - big_r, 0.0)
            tail = phi_r * u + c * big_r ** (-beta) * ((1.0 + u) * np.log1p(u) - u)
            return head + tail
        return np.vectorize(self.second_primitive, otypes=[float])(x)

    # -- derived quantities --------------------------------------------------

    def floor_at(self, diameter_bound: float) -> float:
        """Uniform communication lower bound once the support diameter stays
        below ``diameter_bound``."""
        if diameter_bound <= 0.0:
            raise ProtocolError("diameter bound must be positive")
        if self.kind == KIND_ZERO:
            return 0.0
        return self.phi(diameter_bound)

    @property
    def bounded(self) -> bool:
        return self.sup_norm is not None

    @property
    def singular(self) -> bool:
        return self.kind == KIND_WEAKLY_SINGULAR

    @property
    def name(self) -> str:
        return _KIND_NAMES[self.kind]

    def kernel_spec(self):
        """(kind id, parameter vector) consumed by the pair kernels, or None
        when only the generic callable path applies."""
        if self.kind == KIND_CUSTOM:
            return None
        return self.kind, np.asarray(self.params, dtype=float)


# -- spot validation ---------------------------------------------------------

def _check_shape(p: Protocol) -> None:
    rs = np.concatenate([np.geomspace(1e-9, 1e3, 121), np.linspace(0.05, 50.0, 80)])
    vals = p.phi_np(rs)
    if np.any(vals < 0.0):
        raise ProtocolError("kernel must be nonnegative")
    order = np.argsort(rs)
    v = vals[order]
    if np.any(np.diff(v) > 1e-12 * max(1.0, np.nanmax(v[np.isfinite(v)]))):
        raise ProtocolError("kernel must be radially nonincreasing")
    if p.kind == KIND_WEAKLY_SINGULAR:
        c, beta, big_r = p.params
        r = np.geomspace(big_r * 1e-8, big_r * (1.0 - 1e-12), 64)
        if np.any(p.phi_np(r) < c * r ** (-beta) * (1.0 - 1e-12)):
            raise ProtocolError("weakly singular kernel violates its stated lower bound")
    if abs(p.primitive(0.0)) > 1e-15:
        raise ProtocolError("kernel primitive must vanish at zero")


def zero() -> Protocol:
    return Protocol(KIND_ZERO, (), heavy_tailed=False, sup_norm=0.0)


def constant(phi0: float) -> Protocol:
    if phi0 <= 0.0:
        raise ProtocolError("constant kernel level must be positive")
    # a positive constant tail integrates to infinity
    p = Protocol(KIND_CONSTANT, (float(phi0),), heavy_tailed=True, sup_norm=float(phi0))
    _check_shape(p)
    return p


def inverse_linear(amp: float = 1.0) -> Protocol:
    if amp <= 0.0:
        raise ProtocolError("amplitude must be positive")
    p = Protocol(KIND_INVERSE_LINEAR, (float(amp),), heavy_tailed=True, sup_norm=float(amp))
    _check_shape(p)
    return p


def weakly_singular(c: float, beta: float, big_r: float) -> Protocol:
    """c*r^(-beta) on (0, R), continued by phi(R)/(1 + (r - R)) beyond R.

    The hyperbolic continuation keeps the kernel continuous, nonincreasing,
    and heavy-tailed.
    """
    if not (0.0 < beta < 1.0):
        raise ProtocolError("singularity order must lie in (0, 1)")
    if c <= 0.0 or big_r <= 0.0:
        raise ProtocolError("c and R must be positive")
    p = Protocol(
        KIND_WEAKLY_SINGULAR,
        (float(c), float(beta), float(big_r)),
        heavy_tailed=True,
        sup_norm=None,
    )
    _check_shape(p)
    return p


def smooth_bounded(
    phi: Callable[[float], float],
    prim: Optional[Callable[[float], float]] = None,
    sup_norm: Optional[float] = None,
    heavy_tailed: bool = False,
) -> Protocol:
    """Bounded kernel given as a callable of |r|; Phi falls back to adaptive
    quadrature when no primitive is supplied."""
    if sup_norm is None:
        sup_norm = float(phi(0.0))
    p = Protocol(
        KIND_CUSTOM,
        (),
        heavy_tailed=heavy_tailed,
        sup_norm=float(sup_norm),
        phi_fn=phi,
        prim_fn=prim,
    )
    _check_shape(p)
    return p


def custom(
    phi: Callable[[float], float],
    prim: Callable[[float], float],
    heavy_tailed: bool,
    sup_norm: Optional[float],
) -> Protocol:
    p = Protocol(
        KIND_CUSTOM, (), heavy_tailed=heavy_tailed, sup_norm=sup_norm,
        phi_fn=phi, prim_fn=prim,
    )
    _check_shape(p)
    return p


# -- pair interactions (hot path; dispatches to the kernel backend) ----------

def pair_accel(p: Protocol, m: np.ndarray, x: np.ndarray, v: np.ndarray,
               rfloor: float = 0.0) -> np.ndarray:
    """a_i = sum_j m_j phi(x_j - x_i)(v_j - v_i)."""
    from . import _backend
    spec = p.kernel_spec()
    if spec is not None:
        kind, params = spec
        return _backend.accel(kind, params, rfloor, m, x, v)
    r = np.abs(x[None, :] - x[:, None])
    if rfloor > 0.0:
        r = np.maximum(r, rfloor)
    f = p.phi_np(r)
    np.fill_diagonal(f, 0.0)
    return (f * (v[None, :] - v[:, None])) @ m


def pair_prim_sum(p: Protocol, m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """out_i = sum_j m_j Phi(x_i - x_j)."""
    from . import _backend
    spec = p.kernel_spec()
    if spec is not None:
        kind, params = spec
        return _backend.prim_sum(kind, params, m, x)
    return p.primitive_np(x[:, None] - x[None, :]) @ m


def from_config(cfg: dict) -> Protocol:
    """Build a protocol from a scenario-file section."""
    kind = cfg.get("kind")
    if kind == "zero":
        return zero()
    if kind == "constant":
        return constant(float(cfg["phi0"]))
    if kind == "inverse_linear":
        return inverse_linear(float(cfg.get("amp", 1.0)))
    if kind == "weakly_singular":
        return weakly_singular(float(cfg["c"]), float(cfg["beta"]), float(cfg["r"]))
    raise ProtocolError(f"unknown or non-serializable protocol kind: {kind!r}")
