# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: structured-grid point location and FE evaluation.

Contracts mirror numpy_impl exactly; see there for documentation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil

cnp.import_array()

BACKEND = "native"

MODE_STRICT = 0
MODE_CLAMP = 1

DEF MAX_MONO = 16    # monomials for degree <= 3 is 10
DEF MAX_LOC = 12     # local basis size for degree <= 3 is 10


def locate(double[:, ::1] pts, double[::1] xlines, double[::1] ylines, int mode):
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t nx = xlines.shape[0] - 1
    cdef Py_ssize_t ny = ylines.shape[0] - 1
    cdef double a = xlines[0], b = xlines[nx]
    cdef double c = ylines[0], d = ylines[ny]

    elem_arr = np.empty(n, dtype=np.int64)
    ref_arr = np.empty((n, 2), dtype=np.float64)
    inside_arr = np.ones(n, dtype=bool)
    cdef long long[::1] elem = elem_arr
    cdef double[:, ::1] ref = ref_arr
    cdef cnp.uint8_t[::1] inside = inside_arr.view(np.uint8)

    cdef double hx0 = 0.0, hy0 = 0.0
    cdef bint uniform_x = True, uniform_y = True
    cdef Py_ssize_t i
    hx0 = (b - a) / nx
    for i in range(nx):
        if abs(xlines[i + 1] - xlines[i] - hx0) > 1e-12 * (b - a):
            uniform_x = False
            break
    hy0 = (d - c) / ny
    for i in range(ny):
        if abs(ylines[i + 1] - ylines[i] - hy0) > 1e-12 * (d - c):
            uniform_y = False
            break

    cdef double x, y, lx, ly, q
    cdef Py_ssize_t ix, iy, lo, hi, mid
    cdef bint ok
    for i in range(n):
        x = pts[i, 0]
        y = pts[i, 1]
        ok = (x >= a) and (x <= b) and (y >= c) and (y <= d)
        if mode == MODE_CLAMP:
            if x < a: x = a
            elif x > b: x = b
            if y < c: y = c
            elif y > d: y = d
            ok = True
        inside[i] = ok
        if not ok:
            elem[i] = -1
            ref[i, 0] = 0.0
            ref[i, 1] = 0.0
            continue
        if uniform_x:
            q = (x - a) / hx0
            ix = <Py_ssize_t> ceil(q) - 1
        else:
            # searchsorted(side='left') - 1
            lo = 0
            hi = nx + 1
            while lo < hi:
                mid = (lo + hi) // 2
                if xlines[mid] < x:
                    lo = mid + 1
                else:
                    hi = mid
            ix = lo - 1
        if ix < 0: ix = 0
        elif ix > nx - 1: ix = nx - 1
        if uniform_y:
            q = (y - c) / hy0
            iy = <Py_ssize_t> ceil(q) - 1
        else:
            lo = 0
            hi = ny + 1
            while lo < hi:
                mid = (lo + hi) // 2
                if ylines[mid] < y:
                    lo = mid + 1
                else:
                    hi = mid
            iy = lo - 1
        if iy < 0: iy = 0
        elif iy > ny - 1: iy = ny - 1

        lx = (x - xlines[ix]) / (xlines[ix + 1] - xlines[ix])
        ly = (y - ylines[iy]) / (ylines[iy + 1] - ylines[iy])
        if lx < 0.0: lx = 0.0
        elif lx > 1.0: lx = 1.0
        if ly < 0.0: ly = 0.0
        elif ly > 1.0: ly = 1.0

        if ly > lx:
            elem[i] = 2 * (iy * nx + ix) + 1
            ref[i, 0] = lx
            ref[i, 1] = ly - lx
        else:
            elem[i] = 2 * (iy * nx + ix)
            ref[i, 0] = lx - ly
            ref[i, 1] = ly
    return elem_arr, ref_arr, inside_arr


def eval_fields(
    elem_in,
    double[:, ::1] ref,
    conn_in,
    double[:, :, ::1] inv_jt,
    double[:, ::1] cmat,
    ex_in,
    ey_in,
    double[:, ::1] coeffs,
):
    cdef long long[::1] elem = np.ascontiguousarray(elem_in, dtype=np.int64)
    cdef long long[:, ::1] conn = np.ascontiguousarray(conn_in, dtype=np.int64)
    cdef long long[::1] ex = np.ascontiguousarray(ex_in, dtype=np.int64)
    cdef long long[::1] ey = np.ascontiguousarray(ey_in, dtype=np.int64)

    cdef Py_ssize_t n = ref.shape[0]
    cdef Py_ssize_t n_loc = cmat.shape[0]
    cdef Py_ssize_t n_mono = cmat.shape[1]
    cdef Py_ssize_t n_f = coeffs.shape[1]

    vals_arr = np.zeros((n, n_f), dtype=np.float64)
    grads_arr = np.zeros((n, n_f, 2), dtype=np.float64)
    cdef double[:, ::1] vals = vals_arr
    cdef double[:, :, ::1] grads = grads_arr

    cdef double xpow[8]
    cdef double ypow[8]
    cdef double mono[MAX_MONO]
    cdef double mono_dx[MAX_MONO]
    cdef double mono_dy[MAX_MONO]
    cdef double phi[MAX_LOC]
    cdef double dphix[MAX_LOC]
    cdef double dphiy[MAX_LOC]

    cdef Py_ssize_t p, m, l, f, e, kx, ky
    cdef double xi, eta, v, gx, gy, cf, j00, j01, j10, j11, gref_x, gref_y
    cdef Py_ssize_t maxdeg = 0
    for m in range(n_mono):
        if ex[m] > maxdeg: maxdeg = ex[m]
        if ey[m] > maxdeg: maxdeg = ey[m]

    for p in range(n):
        e = elem[p]
        xi = ref[p, 0]
        eta = ref[p, 1]
        xpow[0] = 1.0
        ypow[0] = 1.0
        for m in range(maxdeg):
            xpow[m + 1] = xpow[m] * xi
            ypow[m + 1] = ypow[m] * eta
        for m in range(n_mono):
            kx = ex[m]
            ky = ey[m]
            mono[m] = xpow[kx] * ypow[ky]
            mono_dx[m] = kx * xpow[kx - 1] * ypow[ky] if kx > 0 else 0.0
            mono_dy[m] = ky * xpow[kx] * ypow[ky - 1] if ky > 0 else 0.0
        for l in range(n_loc):
            v = 0.0
            gx = 0.0
            gy = 0.0
            for m in range(n_mono):
                cf = cmat[l, m]
                v += cf * mono[m]
                gx += cf * mono_dx[m]
                gy += cf * mono_dy[m]
            phi[l] = v
            dphix[l] = gx
            dphiy[l] = gy
        j00 = inv_jt[e, 0, 0]
        j01 = inv_jt[e, 0, 1]
        j10 = inv_jt[e, 1, 0]
        j11 = inv_jt[e, 1, 1]
        for f in range(n_f):
            v = 0.0
            gref_x = 0.0
            gref_y = 0.0
            for l in range(n_loc):
                cf = coeffs[conn[e, l], f]
                v += cf * phi[l]
                gref_x += cf * dphix[l]
                gref_y += cf * dphiy[l]
            vals[p, f] = v
            grads[p, f, 0] = j00 * gref_x + j01 * gref_y
            grads[p, f, 1] = j10 * gref_x + j11 * gref_y
    return vals_arr, grads_arr
