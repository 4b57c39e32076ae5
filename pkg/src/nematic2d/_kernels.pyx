# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stencil kernels.  Mirrors ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

BACKEND = "cython"

DEF PERIODIC = 0
DEF NEUMANN = 1
DEF DIRICHLET = 2


cdef inline double _om(Py_ssize_t j, Py_ssize_t i, Py_ssize_t ny, Py_ssize_t nx) nogil:
    cdef double o = 1.0
    if i == 0 or i == nx - 1:
        o *= 0.5
    if j == 0 or j == ny - 1:
        o *= 0.5
    return o


cdef void _edge_sum(const double[:, ::1] x, double[:, ::1] out, double hx, double hy, int bc) nogil:
    cdef Py_ssize_t ny = x.shape[0], nx = x.shape[1]
    cdef Py_ssize_t i, j, ip, im, jp, jm
    cdef double ax = 1.0 / (hx * hx), ay = 1.0 / (hy * hy)
    cdef double tx, ty, s, c
    if bc == PERIODIC:
        for j in range(ny):
            jp = j + 1 if j + 1 < ny else 0
            jm = j - 1 if j > 0 else ny - 1
            for i in range(nx):
                ip = i + 1 if i + 1 < nx else 0
                im = i - 1 if i > 0 else nx - 1
                c = x[j, i]
                out[j, i] = (x[j, ip] - 2.0 * c + x[j, im]) * ax + (x[jp, i] - 2.0 * c + x[jm, i]) * ay
        return
    for j in range(ny):
        ty = 0.5 if (bc == NEUMANN and (j == 0 or j == ny - 1)) else 1.0
        for i in range(nx):
            tx = 0.5 if (bc == NEUMANN and (i == 0 or i == nx - 1)) else 1.0
            c = x[j, i]
            s = 0.0
            if i + 1 < nx:
                s += ty * (x[j, i + 1] - c) * ax
            if i > 0:
                s += ty * (x[j, i - 1] - c) * ax
            if j + 1 < ny:
                s += tx * (x[j + 1, i] - c) * ay
            if j > 0:
                s += tx * (x[j - 1, i] - c) * ay
            out[j, i] = s


cdef void _sym_apply(double[:, ::1] p, double[:, ::1] q, double alpha, double hx, double hy, int bc) nogil:
    cdef Py_ssize_t ny = p.shape[0], nx = p.shape[1]
    cdef Py_ssize_t i, j
    _edge_sum(p, q, hx, hy, bc)
    for j in range(ny):
        for i in range(nx):
            if bc == NEUMANN:
                q[j, i] = _om(j, i, ny, nx) * p[j, i] - alpha * q[j, i]
            elif bc == DIRICHLET and (i == 0 or j == 0 or i == nx - 1 or j == ny - 1):
                q[j, i] = 0.0
            else:
                q[j, i] = p[j, i] - alpha * q[j, i]


def helmholtz_apply(x, double alpha, double hx, double hy, int bc):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t ny = xv.shape[0], nx = xv.shape[1]
    out = np.empty((ny, nx))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    with nogil:
        _edge_sum(xv, ov, hx, hy, bc)
        for j in range(ny):
            for i in range(nx):
                if bc == NEUMANN:
                    ov[j, i] = xv[j, i] - alpha * ov[j, i] / _om(j, i, ny, nx)
                elif bc == DIRICHLET and (i == 0 or j == 0 or i == nx - 1 or j == ny - 1):
                    ov[j, i] = xv[j, i]
                else:
                    ov[j, i] = xv[j, i] - alpha * ov[j, i]
    return out


cdef double _dot(double[:, ::1] a, double[:, ::1] b) nogil:
    cdef Py_ssize_t i, j
    cdef double s = 0.0
    for j in range(a.shape[0]):
        for i in range(a.shape[1]):
            s += a[j, i] * b[j, i]
    return s


def cg_helmholtz(b, x0, double alpha, double hx, double hy, int bc, double tol, int maxiter):
    cdef const double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    x = np.array(x0, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] xv = x
    cdef Py_ssize_t ny = bv.shape[0], nx = bv.shape[1]
    rhs_a = np.empty((ny, nx))
    r_a = np.empty((ny, nx))
    p_a = np.empty((ny, nx))
    q_a = np.empty((ny, nx))
    cdef double[:, ::1] rhs = rhs_a, r = r_a, p = p_a, q = q_a
    cdef Py_ssize_t i, j
    cdef int it = 0
    cdef bint wall
    cdef double bnorm, rr, rr_new, a, beta
    with nogil:
        for j in range(ny):
            for i in range(nx):
                wall = bc == DIRICHLET and (i == 0 or j == 0 or i == nx - 1 or j == ny - 1)
                if bc == NEUMANN:
                    rhs[j, i] = _om(j, i, ny, nx) * bv[j, i]
                elif wall:
                    rhs[j, i] = 0.0
                else:
                    rhs[j, i] = bv[j, i]
        if bc == DIRICHLET:
            _edge_sum(xv, q, hx, hy, bc)
            for j in range(ny):
                for i in range(nx):
                    if i == 0 or j == 0 or i == nx - 1 or j == ny - 1:
                        r[j, i] = 0.0
                    else:
                        r[j, i] = rhs[j, i] - (xv[j, i] - alpha * q[j, i])
        else:
            _sym_apply(xv, q, alpha, hx, hy, bc)
            for j in range(ny):
                for i in range(nx):
                    r[j, i] = rhs[j, i] - q[j, i]
        bnorm = sqrt(_dot(rhs, rhs))
        if bnorm == 0.0:
            bnorm = 1.0
        rr = _dot(r, r)
        if sqrt(rr) > tol * bnorm:
            for j in range(ny):
                for i in range(nx):
                    p[j, i] = r[j, i]
            while it < maxiter:
                it += 1
                _sym_apply(p, q, alpha, hx, hy, bc)
                a = rr / _dot(p, q)
                for j in range(ny):
                    for i in range(nx):
                        xv[j, i] += a * p[j, i]
                        r[j, i] -= a * q[j, i]
                rr_new = _dot(r, r)
                if sqrt(rr_new) <= tol * bnorm:
                    rr = rr_new
                    break
                beta = rr_new / rr
                for j in range(ny):
                    for i in range(nx):
                        p[j, i] = r[j, i] + beta * p[j, i]
                rr = rr_new
    return x, it, sqrt(rr) / bnorm


def upwind_divergence(rho, u, w, double hx, double hy, bint periodic):
    cdef const double[:, ::1] rv = np.ascontiguousarray(rho, dtype=np.float64)
    cdef const double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t ny = rv.shape[0], nx = rv.shape[1]
    out = np.zeros((ny, nx))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, ip, jp
    cdef double f, vf, sx, sy
    with nogil:
        for j in range(ny):
            for i in range(nx):
                if periodic:
                    ip = i + 1 if i + 1 < nx else 0
                elif i + 1 < nx:
                    ip = i + 1
                else:
                    continue
                vf = 0.5 * (uv[j, i] + uv[j, ip])
                f = vf * rv[j, i] if vf > 0.0 else vf * rv[j, ip]
                sx = 2.0 if (not periodic and i == 0) else 1.0
                ov[j, i] += sx * f / hx
                sx = 2.0 if (not periodic and ip == nx - 1) else 1.0
                ov[j, ip] -= sx * f / hx
        for j in range(ny):
            if periodic:
                jp = j + 1 if j + 1 < ny else 0
            elif j + 1 < ny:
                jp = j + 1
            else:
                continue
            sy = 2.0 if (not periodic and j == 0) else 1.0
            for i in range(nx):
                vf = 0.5 * (wv[j, i] + wv[jp, i])
                f = vf * rv[j, i] if vf > 0.0 else vf * rv[jp, i]
                ov[j, i] += sy * f / hy
                ov[jp, i] -= (2.0 if (not periodic and jp == ny - 1) else 1.0) * f / hy
    return out
