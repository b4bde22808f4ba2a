"""NumPy fallback for the pair-interaction kernels.

Broadcast O(k^2) matrices instead of compiled loops; selected at import when
the extension module is unavailable (or forced via STICKYCS_PURE_PYTHON=1).
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def _phi_matrix(kind: int, params: np.ndarray, rfloor: float, r: np.ndarray) -> np.ndarray:
    a = np.abs(r)
    if rfloor > 0.0:
        a = np.maximum(a, rfloor)
    if kind == 0:
        return np.zeros_like(a)
    if kind == 1:
        return np.full_like(a, params[0])
    if kind == 2:
        return params[0] / (1.0 + a)
    c, beta, big_r = params
    with np.errstate(divide="ignore"):
        return np.where(a < big_r, c * a ** (-beta),
                        c * big_r ** (-beta) / (1.0 + np.maximum(a - big_r, 0.0)))


def _prim_matrix(kind: int, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    a = np.abs(x)
    s = np.sign(x)
    if kind == 0:
        return np.zeros_like(a)
    if kind == 1:
        return s * params[0] * a
    if kind == 2:
        return s * params[0] * np.log1p(a)
    c, beta, big_r = params
    head = c * np.minimum(a, big_r) ** (1.0 - beta) / (1.0 - beta)
    tail = c * big_r ** (-beta) * np.log1p(np.maximum(a - big_r, 0.0))
    return s * (head + tail)


def accel(kind: int, params: np.ndarray, rfloor: float,
          m: np.ndarray, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    if kind == 0:
        return np.zeros_like(x)
    r = x[None, :] - x[:, None]
    f = _phi_matrix(kind, params, rfloor, r)
    np.fill_diagonal(f, 0.0)
    dv = v[None, :] - v[:, None]
    return (f * dv) @ m


def prim_sum(kind: int, params: np.ndarray, m: np.ndarray, x: np.ndarray) -> np.ndarray:
    if kind == 0:
        return np.zeros_like(x)
    g = _prim_matrix(kind, params, x[:, None] - x[None, :])
    return g @ m
