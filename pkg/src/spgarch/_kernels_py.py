"""Pure numpy/scipy versions of the compiled kernels in ``_kernels.pyx``.

Used when the extension is not built or ``SPGARCH_PURE_PYTHON=1``.
Results match the compiled kernels to round-off, not bit for bit.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


def _csr(indptr, indices, data):
    n = len(indptr) - 1
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def _factor(m):
    # triangular input: the natural ordering is already fill-free
    return splu(sp.csc_matrix(m), permc_spec="NATURAL", diag_pivot_thresh=0.0)


def lower_solve(indptr, indices, data, scale, rhs):
    rhs = np.ascontiguousarray(rhs, dtype=np.float64)
    n = rhs.shape[0]
    m = sp.identity(n, format="csr") - scale * _csr(indptr, indices, data)
    return np.ascontiguousarray(_factor(m).solve(rhs).reshape(rhs.shape))


def lower_solve_pair(ip1, ix1, d1, s1, colscale, ip2, ix2, d2, s2, rhs):
    rhs = np.ascontiguousarray(rhs, dtype=np.float64)
    colscale = np.asarray(colscale, dtype=np.float64)
    n, k = rhs.shape
    l1 = _csr(ip1, ix1, d1)
    base = sp.identity(n, format="csr") - s2 * _csr(ip2, ix2, d2)
    out = np.empty((n, k))
    for c in range(k):
        m = base - s1 * (l1 @ sp.diags(colscale[:, c]))
        out[:, c] = _factor(m).solve(rhs[:, c])
    return out


def fixed_point(mode, ip1, ix1, d1, s1, ip2, ix2, d2, s2, alpha, e, z0, tol, max_iter):
    w1 = s1 * _csr(ip1, ix1, d1)
    w2 = s2 * _csr(ip2, ix2, d2)
    e = np.asarray(e, dtype=np.float64)
    z = np.array(z0, dtype=np.float64, copy=True)
    prev = -1.0
    contraction = 0.0
    step = 0.0
    status = 1
    it = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while it < max_iter:
            it += 1
            if mode == 0:
                fz = np.where(z >= 0.0, z, 0.0)
                g = np.maximum(e * z, 0.0)
                zn = z + alpha - fz + w1 @ g + w2 @ fz
            else:
                zn = alpha + w1 @ (e + z) + w2 @ z
            diff = np.abs(zn - z)
            step = float(diff.max()) if np.all(np.isfinite(diff)) else np.inf
            zmax = float(np.abs(zn).max())
            z = zn
            if not np.isfinite(step):
                status = 2
                break
            if prev > 1e-13 * (1.0 + zmax):
                contraction = max(contraction, step / prev)
            prev = step
            if step <= tol:
                status = 0
                break
    return z, it, contraction, step, status
