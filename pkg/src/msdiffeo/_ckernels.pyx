# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Signatures mirror ``msdiffeo._fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor

cnp.import_array()


cdef inline Py_ssize_t _cell(double u, Py_ssize_t n, double* frac) noexcept nogil:
    cdef double f = floor(u)
    cdef Py_ssize_t i0 = <Py_ssize_t>f
    if i0 < 0:
        i0 = 0
    elif i0 > n - 2:
        i0 = n - 2
    frac[0] = u - i0
    return i0


cdef inline double _clamp(double u, double hi) noexcept nogil:
    if u < 0.0:
        return 0.0
    if u > hi:
        return hi
    return u


def interp_scalar(const double[:, ::1] values, const double[:, ::1] pts):
    cdef Py_ssize_t nx = values.shape[0], ny = values.shape[1]
    cdef Py_ssize_t n = pts.shape[0], k, i0, j0
    cdef double a, b
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for k in range(n):
            i0 = _cell(_clamp(pts[k, 0], nx - 1.0), nx, &a)
            j0 = _cell(_clamp(pts[k, 1], ny - 1.0), ny, &b)
            o[k] = (((1.0 - a) * (1.0 - b)) * values[i0, j0] + (a * (1.0 - b)) * values[i0 + 1, j0]
                    + ((1.0 - a) * b) * values[i0, j0 + 1] + (a * b) * values[i0 + 1, j0 + 1])
    return out


cdef void _vec(const double[:, :, ::1] values, const double[:, ::1] pts, double[:, ::1] o,
               bint fade) noexcept nogil:
    cdef Py_ssize_t nx = values.shape[0], ny = values.shape[1]
    cdef Py_ssize_t k, c, i0, j0
    cdef double u, w, du, dw, f, a, b, c00, c10, c01, c11
    for k in range(pts.shape[0]):
        u = pts[k, 0]
        w = pts[k, 1]
        f = 1.0
        if fade:
            du = -u
            if u - (nx - 1.0) > du:
                du = u - (nx - 1.0)
            if du < 0.0:
                du = 0.0
            dw = -w
            if w - (ny - 1.0) > dw:
                dw = w - (ny - 1.0)
            if dw < 0.0:
                dw = 0.0
            f = (1.0 - du if du < 1.0 else 0.0) * (1.0 - dw if dw < 1.0 else 0.0)
            u = _clamp(u, nx - 1.0)
            w = _clamp(w, ny - 1.0)
        i0 = _cell(u, nx, &a)
        j0 = _cell(w, ny, &b)
        c00 = (1.0 - a) * (1.0 - b)
        c10 = a * (1.0 - b)
        c01 = (1.0 - a) * b
        c11 = a * b
        for c in range(2):
            o[k, c] = (c00 * values[i0, j0, c] + c10 * values[i0 + 1, j0, c]
                       + c01 * values[i0, j0 + 1, c] + c11 * values[i0 + 1, j0 + 1, c]) * f


def interp_vector(const double[:, :, ::1] values, const double[:, ::1] pts):
    out = np.empty((pts.shape[0], 2))
    cdef double[:, ::1] o = out
    with nogil:
        _vec(values, pts, o, True)
    return out


def interp_map(const double[:, :, ::1] values, const double[:, ::1] pts):
    out = np.empty((pts.shape[0], 2))
    cdef double[:, ::1] o = out
    with nogil:
        _vec(values, pts, o, False)
    return out


def gauss_apply(const double[:, ::1] x, const double[:, ::1] centers, const double[:, :, ::1] mom,
                const double[::1] sig2, const double[::1] weights):
    cdef Py_ssize_t n = x.shape[0], m = centers.shape[0], nt = weights.shape[0]
    cdef Py_ssize_t a, b, t
    cdef double dx, dy, r2, e, sx, sy, accx, accy
    out = np.zeros((n, 2))
    cdef double[:, ::1] o = out
    with nogil:
        for a in range(n):
            accx = 0.0
            accy = 0.0
            for t in range(nt):
                sx = 0.0
                sy = 0.0
                for b in range(m):
                    dx = x[a, 0] - centers[b, 0]
                    dy = x[a, 1] - centers[b, 1]
                    r2 = dx * dx + dy * dy
                    e = weights[t] * exp(r2 * (-0.5 / sig2[t]))
                    sx = sx + e * mom[t, b, 0]
                    sy = sy + e * mom[t, b, 1]
                accx = accx + sx
                accy = accy + sy
            o[a, 0] = accx
            o[a, 1] = accy
    return out
