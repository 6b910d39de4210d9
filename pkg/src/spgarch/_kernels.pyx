# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a drop-in twin in ``_kernels_py`` with the same
signature and semantics; ``spgarch.kernels`` picks one at import time.
CSR index arrays are always int64.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, isfinite

cnp.import_array()

ctypedef cnp.int64_t idx_t


def lower_solve(const idx_t[::1] indptr, const idx_t[::1] indices,
                const double[::1] data, double scale, rhs):
    """Solve ``(I - scale * L) X = rhs`` by forward substitution.

    ``L`` must be strictly lower triangular in CSR form; ``rhs`` is (n, k).
    """
    cdef double[:, ::1] b = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0], k = b.shape[1]
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] x = out
    cdef Py_ssize_t i, p, c, j
    cdef double w
    for i in range(n):
        for c in range(k):
            x[i, c] = b[i, c]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = scale * data[p]
            for c in range(k):
                x[i, c] += w * x[j, c]
    return out


def lower_solve_pair(const idx_t[::1] ip1, const idx_t[::1] ix1, const double[::1] d1,
                     double s1, colscale,
                     const idx_t[::1] ip2, const idx_t[::1] ix2, const double[::1] d2,
                     double s2, rhs):
    """Solve ``(I - s1 * L1 diag(e) - s2 * L2) X = rhs`` column by column.

    ``colscale`` holds one scaling vector ``e`` per right-hand side and has
    the same (n, k) shape as ``rhs``. Both ``L1`` and ``L2`` must be strictly
    lower triangular.
    """
    cdef double[:, ::1] b = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef double[:, ::1] e = np.ascontiguousarray(colscale, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0], k = b.shape[1]
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] x = out
    cdef Py_ssize_t i, p, c, j
    cdef double w
    for i in range(n):
        for c in range(k):
            x[i, c] = b[i, c]
        for p in range(ip1[i], ip1[i + 1]):
            j = ix1[p]
            w = s1 * d1[p]
            for c in range(k):
                x[i, c] += w * e[j, c] * x[j, c]
        for p in range(ip2[i], ip2[i + 1]):
            j = ix2[p]
            w = s2 * d2[p]
            for c in range(k):
                x[i, c] += w * x[j, c]
    return out


def fixed_point(int mode,
                const idx_t[::1] ip1, const idx_t[::1] ix1, const double[::1] d1, double s1,
                const idx_t[::1] ip2, const idx_t[::1] ix2, const double[::1] d2, double s2,
                double alpha, const double[::1] e, z0, double tol, long max_iter):
    """Banach iteration of the volatility operator.

    mode 0: ``z <- z + alpha + s1 W1 g(e * z) - (I - s2 W2) g(z)`` with
    ``g(x) = x * 1[x >= 0]`` and ``e`` the squared innovations.
    mode 1 (log domain): ``u <- alpha + s1 W1 (e + u) + s2 W2 u`` with ``e``
    the log squared innovations.

    Returns ``(z, iterations, contraction_estimate, last_step, status)``;
    status 0 converged, 1 budget exhausted, 2 non-finite iterate.
    """
    cdef Py_ssize_t n = e.shape[0]
    za = np.array(z0, dtype=np.float64, copy=True)
    zb = np.empty(n, dtype=np.float64)
    fz_arr = np.empty(n, dtype=np.float64)
    g_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] z = za
    cdef double[::1] zn = zb
    cdef double[::1] fz = fz_arr
    cdef double[::1] g = g_arr
    cdef double[::1] tmp
    cdef Py_ssize_t i, p
    cdef long it = 0
    cdef int status = 1
    cdef double acc, v, step = 0.0, prev = -1.0, ratio, contraction = 0.0, zmax

    while it < max_iter:
        it += 1
        if mode == 0:
            for i in range(n):
                fz[i] = z[i] if z[i] >= 0.0 else 0.0
                v = e[i] * z[i]
                g[i] = v if v >= 0.0 else 0.0
            for i in range(n):
                acc = z[i] + alpha - fz[i]
                for p in range(ip1[i], ip1[i + 1]):
                    acc += s1 * d1[p] * g[ix1[p]]
                for p in range(ip2[i], ip2[i + 1]):
                    acc += s2 * d2[p] * fz[ix2[p]]
                zn[i] = acc
        else:
            for i in range(n):
                acc = alpha
                for p in range(ip1[i], ip1[i + 1]):
                    acc += s1 * d1[p] * (e[ix1[p]] + z[ix1[p]])
                for p in range(ip2[i], ip2[i + 1]):
                    acc += s2 * d2[p] * z[ix2[p]]
                zn[i] = acc
        step = 0.0
        zmax = 0.0
        for i in range(n):
            v = fabs(zn[i] - z[i])
            if v > step or not isfinite(v):
                step = v
            if fabs(zn[i]) > zmax:
                zmax = fabs(zn[i])
        tmp = z
        z = zn
        zn = tmp
        if not isfinite(step):
            status = 2
            break
        # ratios of round-off sized steps carry no information
        if prev > 1e-13 * (1.0 + zmax):
            ratio = step / prev
            if ratio > contraction:
                contraction = ratio
        prev = step
        if step <= tol:
            status = 0
            break
    return np.asarray(z).copy(), it, contraction, step, status
