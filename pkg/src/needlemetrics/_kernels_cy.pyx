# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot stream kernels.

Element-wise arithmetic mirrors ``_kernels_py`` so both backends agree to
machine precision.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport acos, fabs, sin, sqrt

cnp.import_array()

BACKEND = "compiled"


def rel_angles(q):
    """Rotation angle between consecutive unit quaternions, shape (N-1,)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t n = qq.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n - 1, dtype=np.float64)
    cdef Py_ssize_t j
    cdef double d
    for j in range(n - 1):
        d = fabs(qq[j, 0] * qq[j + 1, 0] + qq[j, 1] * qq[j + 1, 1]
                 + qq[j, 2] * qq[j + 1, 2] + qq[j, 3] * qq[j + 1, 3])
        if d > 1.0:
            d = 1.0
        out[j] = 2.0 * acos(d)
    return out


def slerp_resample(t, q, t_query):
    """Spherical linear interpolation of a quaternion stream onto new times."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tt = np.ascontiguousarray(t, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tq = np.ascontiguousarray(t_query, dtype=np.float64)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] idx = np.clip(
        np.searchsorted(tt, tq, side="right") - 1, 0, tt.shape[0] - 2
    ).astype(np.intp)
    cdef Py_ssize_t m = tq.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((m, 4), dtype=np.float64)
    cdef Py_ssize_t i, k, c
    cdef double u, d, sign, omega, sin_omega, wa, wb, norm
    for i in range(m):
        k = idx[i]
        u = (tq[i] - tt[k]) / (tt[k + 1] - tt[k])
        d = (qq[k, 0] * qq[k + 1, 0] + qq[k, 1] * qq[k + 1, 1]
             + qq[k, 2] * qq[k + 1, 2] + qq[k, 3] * qq[k + 1, 3])
        sign = -1.0 if d < 0.0 else 1.0
        d = fabs(d)
        if d > 1.0:
            d = 1.0
        omega = acos(d)
        if omega < 1e-7:
            wa = 1.0 - u
            wb = u
        else:
            sin_omega = sin(omega)
            wa = sin((1.0 - u) * omega) / sin_omega
            wb = sin(u * omega) / sin_omega
        for c in range(4):
            out[i, c] = wa * qq[k, c] + wb * sign * qq[k + 1, c]
        norm = sqrt(out[i, 0] * out[i, 0] + out[i, 1] * out[i, 1]
                    + out[i, 2] * out[i, 2] + out[i, 3] * out[i, 3])
        for c in range(4):
            out[i, c] /= norm
        sign = 1.0
        if out[i, 0] < 0.0:
            sign = -1.0
        elif out[i, 0] == 0.0:
            for c in range(1, 4):
                if out[i, c] != 0.0:
                    if out[i, c] < 0.0:
                        sign = -1.0
                    break
        if sign < 0.0:
            for c in range(4):
                out[i, c] = -out[i, c]
    return out


def path_length(x):
    """Accumulated euclidean distance along a (N, 3) position stream."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xx.shape[0]
    cdef double total = 0.0
    cdef double dx, dy, dz
    cdef Py_ssize_t j
    for j in range(n - 1):
        dx = xx[j + 1, 0] - xx[j, 0]
        dy = xx[j + 1, 1] - xx[j, 1]
        dz = xx[j + 1, 2] - xx[j, 2]
        total += sqrt(dx * dx + dy * dy + dz * dz)
    return total
