# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pair-interaction kernels for the built-in protocol kinds.

These are the hot inner loops of the integrator: O(k^2) sweeps evaluated a
dozen times per accepted step.  Semantics match stickycs._kernels_py exactly.
"""

from libc.math cimport fabs, log1p, pow, copysign

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


cdef inline double _phi(int kind, const double* p, double r, double rfloor) nogil:
    cdef double a = fabs(r)
    if a < rfloor:
        a = rfloor
    if kind == 0:
        return 0.0
    elif kind == 1:
        return p[0]
    elif kind == 2:
        return p[0] / (1.0 + a)
    else:
        if a < p[2]:
            return p[0] * pow(a, -p[1])
        return p[0] * pow(p[2], -p[1]) / (1.0 + (a - p[2]))


cdef inline double _prim(int kind, const double* p, double x) nogil:
    cdef double a = fabs(x)
    cdef double s = copysign(1.0, x)
    cdef double head
    if x == 0.0 or kind == 0:
        return 0.0
    if kind == 1:
        return s * p[0] * a
    if kind == 2:
        return s * p[0] * log1p(a)
    if a <= p[2]:
        return s * p[0] * pow(a, 1.0 - p[1]) / (1.0 - p[1])
    head = p[0] * pow(p[2], 1.0 - p[1]) / (1.0 - p[1])
    return s * (head + p[0] * pow(p[2], -p[1]) * log1p(a - p[2]))


def accel(int kind, cnp.ndarray[double, ndim=1] params, double rfloor,
          cnp.ndarray[double, ndim=1] m, cnp.ndarray[double, ndim=1] x,
          cnp.ndarray[double, ndim=1] v):
    """a_i = sum_j m_j phi(x_j - x_i) (v_j - v_i), pairwise antisymmetric."""
    cdef Py_ssize_t n = m.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(n, dtype=np.float64)
    cdef double[:] mm = m
    cdef double[:] xx = x
    cdef double[:] vv = v
    cdef double[:] oo = out
    cdef const double* pp = <const double*> cnp.PyArray_DATA(params)
    cdef Py_ssize_t i, j
    cdef double f, w
    if kind == 0:
        return out
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                f = _phi(kind, pp, xx[j] - xx[i], rfloor)
                w = f * (vv[j] - vv[i])
                oo[i] += mm[j] * w
                oo[j] -= mm[i] * w
    return out


def prim_sum(int kind, cnp.ndarray[double, ndim=1] params,
             cnp.ndarray[double, ndim=1] m, cnp.ndarray[double, ndim=1] x):
    """out_i = sum_j m_j Phi(x_i - x_j); antisymmetry of Phi halves the work."""
    cdef Py_ssize_t n = m.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(n, dtype=np.float64)
    cdef double[:] mm = m
    cdef double[:] xx = x
    cdef double[:] oo = out
    cdef const double* pp = <const double*> cnp.PyArray_DATA(params)
    cdef Py_ssize_t i, j
    cdef double g
    if kind == 0:
        return out
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                g = _prim(kind, pp, xx[i] - xx[j])
                oo[i] += mm[j] * g
                oo[j] -= mm[i] * g
    return out
