"""Simulation of spatial GARCH-type random fields.

The volatility vector ``h`` solves ``F(h) = alpha + W1 gamma(E h) + W2 F(h)``
with ``E = diag(eps^2)``, ``W1 = rho W1*`` and ``W2 = lambda W2*``. Closed
forms exist for all three variants; the generic Banach iteration is kept both
as a fallback and as an independent check of the closed forms.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from spgarch import kernels, rng
from spgarch._io import atomic_write_text
from spgarch.errors import (
    DomainError,
    NoConvergence,
    NonPositiveH,
    NotContraction,
    NumericalFailure,
    SingularSystem,
    SpgarchError,
)
from spgarch.model import EPS_FLOOR, ModelSpec, Theta, Variant
from spgarch.weights import SiteSet, WeightMatrix

__all__ = [
    "RandomField",
    "SolveReport",
    "check_contraction",
    "solve_h_direct_spgarch",
    "solve_h_direct_hspgarch",
    "solve_h_fixed_point",
    "solve_h",
    "simulate_field",
    "simulate_batch",
    "write_field_csv",
    "read_field_csv",
    "FIELD_HEADER",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
FIELD_HEADER = ("site", "x", "y_coord", "eps", "h", "y")


@dataclass(frozen=True)
class SolveReport:
    method: str
    iterations: int
    residual: float
    contraction_estimate: float

    def to_json(self):
        return {
            "method": self.method,
            "iterations": self.iterations,
            "residual": self.residual,
            "contraction_estimate": self.contraction_estimate,
        }


@dataclass(frozen=True)
class RandomField:
    eps: np.ndarray
    h: np.ndarray
    y: np.ndarray
    seed: int | None = None
    sites: SiteSet | None = None
    report: SolveReport | None = field(default=None, compare=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]


def _effective_lambda(spec: ModelSpec, theta: Theta) -> float:
    # spARCH has no volatility feedback regardless of the W2* passed in
    return 0.0 if spec.variant is Variant.SPARCH else theta.lam


def _check_dims(n, *ws):
    for w in ws:
        if w.n != n:
            raise ValueError(f"weight matrix has {w.n} sites, expected {n}")


def check_contraction(spec: ModelSpec, theta: Theta, W1s: WeightMatrix, W2s: WeightMatrix, eps):
    """Infinity-norm Lipschitz bound of the volatility operator.

    Returns ``(bound, bound < 1)``. Weights are non-negative, so the norm of
    ``rho W1* E + lambda W2*`` is the largest row of ``rho W1* e^2 + lambda W2* 1``.
    """
    eps = np.asarray(eps, dtype=np.float64)
    _check_dims(eps.shape[0], W1s, W2s)
    lam = _effective_lambda(spec, theta)
    scale = np.ones_like(eps) if spec.variant.log_linear else eps * eps
    rows = theta.rho * (W1s @ scale) + lam * W2s.row_sums()
    bound = float(rows.max()) if rows.size else 0.0
    return bound, bound < 1.0


def _triangular(*ws) -> bool:
    return all(w.is_strictly_lower for w in ws)


def _residual(variant_log: bool, theta, lam, W1s, W2s, h, eps):
    """Infinity norm of ``F(h) - alpha - W1 gamma(Y^2) - W2 F(h)``."""
    y2 = h * eps * eps
    if variant_log:
        fh, gy = np.log(h), np.log(y2)
    else:
        fh, gy = np.maximum(h, 0.0), np.maximum(y2, 0.0)
    r = fh - theta.alpha - theta.rho * (W1s @ gy) - lam * (W2s @ fh)
    return float(np.abs(r).max())


def _sparse_solve(a, b):
    try:
        lu = splu(sp.csc_matrix(a))
    except RuntimeError as exc:
        raise SingularSystem(f"volatility system is singular: {exc}") from None
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("volatility system is numerically singular")
    return x


def solve_h_direct_spgarch(theta: Theta, W1s: WeightMatrix, W2s: WeightMatrix, eps, lam=None):
    """``h = (I - rho W1* E - lambda W2*)^{-1} alpha 1``.

    ``lam`` overrides ``theta.lam`` (the spARCH case passes 0).
    """
    eps = np.asarray(eps, dtype=np.float64)
    n = eps.shape[0]
    _check_dims(n, W1s, W2s)
    lam = theta.lam if lam is None else lam
    e2 = eps * eps
    rhs = np.full(n, theta.alpha)
    if _triangular(W1s, W2s):
        h = kernels.lower_solve_pair(W1s.indptr, W1s.indices, W1s.data, theta.rho, e2[:, None],
                                     W2s.indptr, W2s.indices, W2s.data, lam, rhs[:, None])[:, 0]
    else:
        a = sp.identity(n, format="csr") - theta.rho * (W1s.csr @ sp.diags(e2)) - lam * W2s.csr
        h = _sparse_solve(a, rhs)
    bad = np.flatnonzero(~(h > 0))
    if bad.size:
        raise NonPositiveH(f"non-positive volatility at {bad.size} site(s), first {bad[0]}", bad)
    bound = float((theta.rho * (W1s @ e2) + lam * W2s.row_sums()).max())
    report = SolveReport("direct", 1, _residual(False, theta, lam, W1s, W2s, h, eps), bound)
    return h, report


def _log_eps2(eps):
    eps = np.asarray(eps, dtype=np.float64)
    small = np.flatnonzero(np.abs(eps) < EPS_FLOOR)
    if small.size:
        raise DomainError(f"innovation at site {small[0]} is zero; log(eps^2) diverges", int(small[0]))
    return np.log(eps * eps)


def _exp_checked(log_h):
    with np.errstate(over="ignore"):
        h = np.exp(log_h)
    bad = np.flatnonzero(~np.isfinite(h))
    if bad.size:
        raise NumericalFailure(f"volatility overflows at site {bad[0]} (log h = {log_h[bad[0]]:.6g})")
    return h


def solve_h_direct_hspgarch(theta: Theta, W1s: WeightMatrix, W2s: WeightMatrix, eps):
    """Hybrid model: solve ``(I - rho W1* - lambda W2*) log h = alpha 1 + rho W1* log eps^2``."""
    eps = np.asarray(eps, dtype=np.float64)
    n = eps.shape[0]
    _check_dims(n, W1s, W2s)
    le = _log_eps2(eps)
    bound = float((theta.rho * W1s.row_sums() + theta.lam * W2s.row_sums()).max())
    if not bound < 1.0:
        raise NotContraction(f"||rho W1* + lambda W2*|| = {bound:.6g} >= 1", bound)
    rhs = theta.alpha + theta.rho * (W1s @ le)
    if _triangular(W1s, W2s):
        hl = kernels.lower_solve_pair(W1s.indptr, W1s.indices, W1s.data, theta.rho, np.ones((n, 1)),
                                      W2s.indptr, W2s.indices, W2s.data, theta.lam, rhs[:, None])[:, 0]
    else:
        a = sp.identity(n, format="csr") - theta.rho * W1s.csr - theta.lam * W2s.csr
        hl = _sparse_solve(a, rhs)
    h = _exp_checked(hl)
    report = SolveReport("direct", 1, _residual(True, theta, theta.lam, W1s, W2s, h, eps), bound)
    return h, report


def solve_h_fixed_point(spec: ModelSpec, theta: Theta, W1s: WeightMatrix, W2s: WeightMatrix, eps,
                        tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Banach iteration started at ``alpha 1``.

    The hybrid model is iterated in ``log h`` (where its operator is affine),
    which keeps every iterate inside the domain of ``log``.
    """
    eps = np.asarray(eps, dtype=np.float64)
    n = eps.shape[0]
    _check_dims(n, W1s, W2s)
    lam = _effective_lambda(spec, theta)
    log_mode = spec.variant.log_linear
    e = _log_eps2(eps) if log_mode else eps * eps
    z0 = np.full(n, theta.alpha)
    z, it, contraction, step, status = kernels.fixed_point(
        1 if log_mode else 0,
        W1s.indptr, W1s.indices, W1s.data, theta.rho,
        W2s.indptr, W2s.indices, W2s.data, lam,
        theta.alpha, e, z0, float(tol), int(max_iter),
    )
    if status != 0:
        why = "diverged" if status == 2 else f"no convergence after {it} iterations"
        raise NoConvergence(f"fixed point {why} (contraction estimate {contraction:.4g})",
                            it, contraction if status == 1 or np.isfinite(contraction) else np.inf)
    if log_mode:
        h = _exp_checked(z)
    else:
        h = z
        bad = np.flatnonzero(~(h > 0))
        if bad.size:
            raise NonPositiveH(f"non-positive volatility at site {bad[0]}", bad)
    report = SolveReport("fixed_point", int(it), _residual(log_mode, theta, lam, W1s, W2s, h, eps),
                         float(contraction))
    return h, report


def solve_h(spec: ModelSpec, theta: Theta, W1s: WeightMatrix, W2s: WeightMatrix, eps,
            solver: str = "auto", tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Dispatch to a solver.

    ``auto`` uses the closed form when it is guaranteed well defined (oriented
    weights, or the contraction bound holds) and otherwise the fixed-point
    iteration, whose failure then diagnoses the ill-posed draw.
    """
    if solver not in ("auto", "direct", "fixed_point"):
        raise ValueError(f"unknown solver {solver!r}")
    if solver == "auto":
        bound, ok = check_contraction(spec, theta, W1s, W2s, eps)
        tri = _triangular(W1s, W2s)
        if spec.variant.log_linear:
            solver = "direct" if ok else "fixed_point"
        else:
            solver = "direct" if tri or ok else "fixed_point"
    if solver == "fixed_point":
        return solve_h_fixed_point(spec, theta, W1s, W2s, eps, tol, max_iter)
    if spec.variant.log_linear:
        return solve_h_direct_hspgarch(theta, W1s, W2s, eps)
    return solve_h_direct_spgarch(theta, W1s, W2s, eps, lam=_effective_lambda(spec, theta))


def simulate_field(spec: ModelSpec, theta: Theta, W1s: WeightMatrix, W2s: WeightMatrix,
                   n: int | None = None, seed: int = 0, solver: str = "auto",
                   tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                   sites: SiteSet | None = None) -> RandomField:
    """Draw innovations from ``seed`` and solve for the field ``Y = sqrt(h) eps``."""
    n = W1s.n if n is None else int(n)
    _check_dims(n, W1s, W2s)
    eps = rng.innovations(seed, n, spec.innovation)
    try:
        h, report = solve_h(spec, theta, W1s, W2s, eps, solver, tol, max_iter)
    except SpgarchError as exc:
        exc.seed = seed
        if exc.args:
            exc.args = (f"{exc.args[0]} [seed={seed}]",) + exc.args[1:]
        raise
    y = np.sqrt(h) * eps
    return RandomField(eps, h, y, seed, sites, report)


def simulate_batch(spec: ModelSpec, theta: Theta, W1s: WeightMatrix, W2s: WeightMatrix, seeds):
    """Many fields on oriented spGARCH/spARCH weights in one sweep.

    Returns ``(eps, h, y)`` arrays of shape ``(len(seeds), n)``; row ``r`` is
    bit-compatible with ``simulate_field(..., seed=seeds[r])`` drawing.
    """
    if spec.variant.log_linear or not _triangular(W1s, W2s):
        rows = [simulate_field(spec, theta, W1s, W2s, seed=s) for s in seeds]
        return tuple(np.vstack([getattr(f, a) for f in rows]) for a in ("eps", "h", "y"))
    n = W1s.n
    eps = np.vstack([rng.innovations(s, n, spec.innovation) for s in seeds])
    lam = _effective_lambda(spec, theta)
    e2 = np.ascontiguousarray((eps * eps).T)
    h = kernels.lower_solve_pair(W1s.indptr, W1s.indices, W1s.data, theta.rho, e2,
                                 W2s.indptr, W2s.indices, W2s.data, lam,
                                 np.full(e2.shape, theta.alpha)).T
    return eps, h, np.sqrt(h) * eps


def _fmt(v) -> str:
    return repr(float(v))


def format_field_csv(fld: RandomField) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELD_HEADER)
    coords = fld.sites.coords if fld.sites is not None else None
    for i in range(fld.n):
        x = _fmt(coords[i, 0]) if coords is not None else ""
        yc = _fmt(coords[i, 1]) if coords is not None and coords.shape[1] > 1 else ""
        w.writerow([i, x, yc, _fmt(fld.eps[i]), _fmt(fld.h[i]), _fmt(fld.y[i])])
    return buf.getvalue()


def write_field_csv(fld: RandomField, path) -> None:
    atomic_write_text(path, format_field_csv(fld))


def read_field_csv(path) -> RandomField:
    """Read a field CSV; rows are re-ordered by the ``site`` column."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"site", "y"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"field file lacks columns {sorted(missing)}")
        rows = list(reader)
    rows.sort(key=lambda r: int(r["site"]))
    if [int(r["site"]) for r in rows] != list(range(len(rows))):
        raise ValueError("site column must enumerate 0..n-1")

    def col(name):
        if not rows or name not in rows[0] or any(r[name] in ("", None) for r in rows):
            return None
        return np.array([float(r[name]) for r in rows])

    y = col("y")
    if y is None:
        raise ValueError("y column has empty cells")
    eps, h = col("eps"), col("h")
    x, yc = col("x"), col("y_coord")
    sites = None
    if x is not None:
        sites = SiteSet(np.column_stack([x, yc]) if yc is not None else x[:, None])
    nan = np.full(y.shape, np.nan)
    return RandomField(nan if eps is None else eps, nan if h is None else h, y, None, sites)
