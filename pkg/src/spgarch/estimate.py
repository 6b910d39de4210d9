"""Non-linear least-squares estimation of ``(rho, lambda, alpha)``.

With ``H_i = log Y_i^2 - c`` and ``c = E log eps^2`` the fitted log
volatility is ``tau^{-1}(alpha c_i(lambda) + rho d_i(lambda)' g)`` where
``c(lambda) = (I - lambda W2*)^{-1} 1``, ``d_i(lambda)'`` are the rows of
``(I - lambda W2*)^{-1} W1*`` and ``g = gamma(exp(H + c))`` is fixed by the
data. The objective

    Q_n(theta) = mean((H - tau^{-1}(alpha c(lambda) + rho D(lambda) g))^2)

is minimised over the parameter box by a multi-start bounded simplex search
followed by a gradient-based polish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import splu

from spgarch import kernels
from spgarch.errors import DomainError, EstimationFailed, NotContraction
from spgarch.model import ALPHA_MIN, ModelSpec, Theta, Variant, log_eps_sq_mean
from spgarch.weights import WeightMatrix, matrix_inf_norm

__all__ = [
    "ObjectiveContext",
    "EstimationResult",
    "Resolvent",
    "build_context",
    "c_d_solve",
    "q_n",
    "q_n_gradient",
    "estimate_nls",
    "dependence_diagnostic",
    "fitted_h",
    "UPPER",
]

UPPER = 0.999
_GRID = (0.1, 0.45, 0.8)
_ALPHA_SCALES = (0.25, 1.0, 4.0)


class Resolvent:
    """Solves ``(I - lam W*) X = B`` for a fixed ``lam``.

    Strictly lower-triangular weights use forward substitution; anything
    else is factorised once with SuperLU and the factor is reused.
    """

    def __init__(self, w: WeightMatrix, lam: float):
        self.w = w
        self.lam = float(lam)
        self._lu = None
        if not w.is_strictly_lower and self.lam != 0.0:
            bound = self.lam * matrix_inf_norm(w)
            if not bound < 1.0:
                raise NotContraction(f"||lambda W2*|| = {bound:.6g} >= 1", bound)
            a = sp.identity(w.n, format="csc") - self.lam * sp.csc_matrix(w.csr)
            self._lu = splu(a)

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        vec = b.ndim == 1
        b2 = b[:, None] if vec else b
        if self.lam == 0.0:
            x = b2.copy()
        elif self._lu is None:
            x = kernels.lower_solve(self.w.indptr, self.w.indices, self.w.data, self.lam, b2)
        else:
            x = self._lu.solve(np.asfortranarray(b2))
        return x[:, 0] if vec else x


def c_d_solve(lam: float, W1s: WeightMatrix, W2s: WeightMatrix):
    """Return ``(c(lam), D_apply)`` with ``D_apply(x) = (I - lam W2*)^{-1} W1* x``."""
    if not 0.0 <= lam < 1.0:
        raise ValueError("lambda must lie in [0, 1)")
    if not lam * matrix_inf_norm(W2s) < 1.0:
        raise NotContraction("||lambda W2*|| >= 1", lam * matrix_inf_norm(W2s))
    res = Resolvent(W2s, lam)
    c = res.solve(np.ones(W2s.n))

    def d_apply(x):
        return res.solve(W1s @ np.asarray(x, dtype=np.float64))

    return c, d_apply


@dataclass(frozen=True, eq=False)
class ObjectiveContext:
    """Data-dependent pieces of ``Q_n`` computed once per sample."""

    spec: ModelSpec
    H: np.ndarray
    c: float
    gamma_tilde_H: np.ndarray
    W1s: WeightMatrix
    W2s: WeightMatrix
    _w1g: np.ndarray = field(repr=False, default=None)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def fixed_lambda(self) -> bool:
        return self.spec.variant is Variant.SPARCH

    def resolvent(self, lam: float) -> Resolvent:
        r = self._cache.get("res")
        if r is None or r.lam != lam:
            r = Resolvent(self.W2s, lam)
            self._cache["res"] = r
        return r


def build_context(spec: ModelSpec, Y, W1s: WeightMatrix, W2s: WeightMatrix,
                  c: float | None = None) -> ObjectiveContext:
    y = np.asarray(Y, dtype=np.float64).ravel()
    n = y.shape[0]
    if W1s.n != n or W2s.n != n:
        raise ValueError("weight matrices do not match the number of observations")
    zero = np.flatnonzero(y == 0.0)
    if zero.size:
        raise DomainError(f"observation at site {zero[0]} is zero; log(Y^2) is undefined", int(zero[0]))
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    c = log_eps_sq_mean(spec) if c is None else float(c)
    y2 = y * y
    log_y2 = np.log(y2)
    H = log_y2 - c
    # gamma(exp(H + c)): Y^2 itself for the positive-part link, log Y^2 for log
    g = log_y2 if spec.variant.log_linear else y2
    for a in (H, g):
        a.setflags(write=False)
    return ObjectiveContext(spec, H, c, g, W1s, W2s, W1s @ g)


def _lam_of(ctx, theta):
    return 0.0 if ctx.fixed_lambda else theta.lam


def _fitted(ctx: ObjectiveContext, rho, lam, alpha, need_derivs=False):
    res = ctx.resolvent(lam)
    cd = res.solve(np.column_stack([np.ones(ctx.n), ctx._w1g]))
    c_vec, d_vec = cd[:, 0], cd[:, 1]
    m = alpha * c_vec + rho * d_vec
    if not need_derivs:
        return m, c_vec, d_vec, None
    if lam == 0.0 and ctx.fixed_lambda:
        dm_dlam = np.zeros_like(m)
    else:
        # d/dlam (I - lam W)^{-1} x = (I - lam W)^{-1} W (I - lam W)^{-1} x
        dcd = res.solve(ctx.W2s @ cd)
        dm_dlam = alpha * dcd[:, 0] + rho * dcd[:, 1]
    return m, c_vec, d_vec, dm_dlam


def _loss(ctx, m):
    if ctx.spec.variant.log_linear:
        logh = m
    else:
        if not np.all(m > 0):
            return math.inf, None
        logh = np.log(m)
    r = ctx.H - logh
    q = float(np.dot(r, r) / ctx.n)
    return (q if math.isfinite(q) else math.inf), r


def q_n(theta: Theta, ctx: ObjectiveContext) -> float:
    """Least-squares objective; ``inf`` when the fitted volatility is infeasible."""
    m, *_ = _fitted(ctx, theta.rho, _lam_of(ctx, theta), theta.alpha)
    return _loss(ctx, m)[0]


def q_n_gradient(theta: Theta, ctx: ObjectiveContext) -> np.ndarray:
    """Analytic gradient of :func:`q_n` in (rho, lambda, alpha) order."""
    lam = _lam_of(ctx, theta)
    m, c_vec, d_vec, dm_dlam = _fitted(ctx, theta.rho, lam, theta.alpha, need_derivs=True)
    q, r = _loss(ctx, m)
    if r is None:
        return np.full(3, np.nan)
    # d tau^{-1}(m)/dm = 1 / (f'(h) h): 1/m for the positive-part link, 1 for log
    wr = r if ctx.spec.variant.log_linear else r / m
    scale = -2.0 / ctx.n
    return scale * np.array([wr @ d_vec, wr @ dm_dlam, wr @ c_vec])


def fitted_h(theta: Theta, ctx: ObjectiveContext) -> np.ndarray:
    """Volatility implied by ``theta`` given the observed squares."""
    m, *_ = _fitted(ctx, theta.rho, _lam_of(ctx, theta), theta.alpha)
    return np.exp(m) if ctx.spec.variant.log_linear else m


def dependence_diagnostic(theta: Theta, ctx: ObjectiveContext) -> float:
    """Plug-in ``(1/n) 1'(I - lam W2*)^{-1} W1* Cov(Delta) W1*'(I - lam W2*')^{-1} 1``.

    ``Delta_j = gamma(Y_j^2) - mean(gamma(Y^2))`` with a diagonal plug-in
    covariance. Small values suggest the dependence is weak enough for the
    least-squares objective to concentrate; it is a diagnostic only.
    """
    lam = _lam_of(ctx, theta)
    delta = ctx.gamma_tilde_H - ctx.gamma_tilde_H.mean()
    ones = np.ones(ctx.n)
    if lam == 0.0:
        u = ones
    else:
        a = sp.identity(ctx.n, format="csc") - lam * sp.csc_matrix(ctx.W2s.csr)
        u = splu(a.T.tocsc()).solve(ones)
    a_vec = ctx.W1s.csr.T @ u
    return float(np.sum(a_vec**2 * delta**2) / ctx.n)


@dataclass
class EstimationResult:
    theta_hat: Theta
    q_value: float
    n_starts: int
    converged: bool
    std_errors: tuple | None
    trace: list = field(default_factory=list)
    failure_count: int = 0
    non_identified: bool = False
    boundary: tuple = ()
    diagnostic: float | None = None

    def to_json(self, include_trace: bool = False):
        def clean(v):
            return None if v is None or not math.isfinite(v) else float(v)

        out = {
            "rho": self.theta_hat.rho,
            "lambda": self.theta_hat.lam,
            "alpha": self.theta_hat.alpha,
            "q": self.q_value,
            "converged": self.converged,
            "se": None if self.std_errors is None else [clean(s) for s in self.std_errors],
            "failures": self.failure_count,
            "non_identified": self.non_identified,
        }
        if include_trace:
            out["trace"] = [{"rho": t[0], "lambda": t[1], "alpha": t[2], "q": q} for t, q in self.trace]
        return out


def _default_starts(ctx: ObjectiveContext):
    if ctx.spec.variant.log_linear:
        v = max(abs(float(ctx.H.mean())), 0.1)
    else:
        v = math.exp(float(ctx.H.mean()) + ctx.c)
    if not (math.isfinite(v) and v > 0):
        v = 1.0
    lams = (0.0,) if ctx.fixed_lambda else _GRID
    return [Theta(r, l, s * v) for r in _GRID for l in lams for s in _ALPHA_SCALES]


class _Problem:
    """Objective over the free coordinates, with evaluation bookkeeping."""

    def __init__(self, ctx: ObjectiveContext, upper: float):
        self.ctx = ctx
        self.free = [0, 2] if ctx.fixed_lambda else [0, 1, 2]
        self.lower = np.array([0.0, 0.0, ALPHA_MIN])[self.free]
        self.upper = np.array([upper, upper, np.inf])[self.free]
        self.failures = 0

    def full(self, x):
        t = np.zeros(3)
        t[self.free] = x
        return t

    def inside(self, x):
        return np.all(x >= self.lower) and np.all(x <= self.upper)

    def value(self, x):
        x = np.asarray(x, dtype=np.float64)
        if not self.inside(x):
            self.failures += 1
            return math.inf
        rho, lam, alpha = self.full(x)
        m, *_ = _fitted(self.ctx, rho, lam, alpha)
        q = _loss(self.ctx, m)[0]
        if not math.isfinite(q):
            self.failures += 1
        return q

    def grad(self, x):
        g = q_n_gradient(Theta.from_array(self.full(np.clip(x, self.lower, self.upper))), self.ctx)
        return g[self.free]

    def projected_grad(self, x):
        g = self.grad(x)
        at_lo = (x <= self.lower) & (g > 0)
        at_hi = (x >= self.upper) & (g < 0)
        return np.where(at_lo | at_hi, 0.0, g)

    def hessian(self, x, scale):
        """Central-difference Hessian of ``scale * Q_n``; steps stay in the box."""
        k = x.size
        hmat = np.empty((k, k))
        for j in range(k):
            step = 1e-5 * max(abs(x[j]), 1e-2)
            up, dn = x.copy(), x.copy()
            up[j] = min(x[j] + step, self.upper[j])
            dn[j] = max(x[j] - step, self.lower[j])
            hmat[:, j] = (self.grad(up) - self.grad(dn)) / (up[j] - dn[j])
        return scale * 0.5 * (hmat + hmat.T)


def estimate_nls(spec: ModelSpec, Y, W1s: WeightMatrix, W2s: WeightMatrix, starts=None,
                 tol: float = 1e-10, max_iter: int = 2000, c_override: float | None = None,
                 upper: float = UPPER, std_errors: bool = True,
                 polish: bool = True) -> EstimationResult:
    """Fit ``(rho, lambda, alpha)`` by non-linear least squares.

    Each start runs a bounded Nelder-Mead search; the best end point is then
    refined with L-BFGS-B on the analytic gradient. ``tol`` is the simplex
    tolerance on the objective value. For spARCH ``lambda`` is fixed at 0.
    """
    ctx = build_context(spec, Y, W1s, W2s, c_override)
    if ctx.n < 4:
        raise ValueError("need at least 4 observations to fit 3 parameters")
    prob = _Problem(ctx, upper)
    starts = _default_starts(ctx) if starts is None else [
        s if isinstance(s, Theta) else Theta(*s) for s in starts]

    best = None
    diagnostics = []
    for s in starts:
        x0 = np.clip(s.as_array()[prob.free], prob.lower, np.minimum(prob.upper, 1e300))
        path = []

        def record(xk, path=path):
            path.append(np.array(xk))

        f0 = prob.value(x0)
        if not math.isfinite(f0):
            diagnostics.append({"start": s.to_json(), "status": "infeasible start"})
            continue
        res = minimize(prob.value, x0, method="Nelder-Mead", callback=record,
                       bounds=list(zip(prob.lower, [None if math.isinf(u) else u for u in prob.upper])),
                       options={"xatol": 1e-6, "fatol": tol, "maxiter": max_iter})
        diagnostics.append({"start": s.to_json(), "q": float(res.fun), "status": res.message})
        if math.isfinite(res.fun) and (best is None or res.fun < best[1]):
            best = (np.array(res.x), float(res.fun), [x0] + path)
    if best is None:
        raise EstimationFailed("every start was infeasible", diagnostics)

    x_best, q_best, path = best
    trace = []
    for xk in path:
        qk = prob.value(xk)
        if not trace or qk < trace[-1][1]:
            trace.append((tuple(prob.full(xk)), qk))

    if polish:
        steps = []
        opt = minimize(prob.value, x_best, jac=prob.grad, method="L-BFGS-B",
                       bounds=list(zip(prob.lower, [None if math.isinf(u) else u for u in prob.upper])),
                       callback=lambda xk: steps.append(np.array(xk)),
                       options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 500})
        x_pol = np.clip(opt.x, prob.lower, prob.upper)
        q_pol = prob.value(x_pol)
        if q_pol <= q_best:
            for xk in steps + [x_pol]:
                qk = prob.value(np.clip(xk, prob.lower, prob.upper))
                if qk < trace[-1][1]:
                    trace.append((tuple(prob.full(np.clip(xk, prob.lower, prob.upper))), qk))
            x_best, q_best = x_pol, q_pol

    full = prob.full(x_best)
    theta_hat = Theta(min(full[0], upper), min(full[1], upper), max(full[2], ALPHA_MIN))
    q_best = q_n(theta_hat, ctx)
    pg = prob.projected_grad(x_best)
    converged = bool(np.all(np.isfinite(pg)) and np.max(np.abs(pg)) <= 1e-6)

    names = ("rho", "lambda", "alpha")
    lo_full = np.array([0.0, 0.0, ALPHA_MIN])
    hi_full = np.array([upper, upper, np.inf])
    boundary = tuple(names[i] for i in prob.free
                     if full[i] <= lo_full[i] + 1e-8 or full[i] >= hi_full[i] - 1e-8)

    se = None
    if std_errors and math.isfinite(q_best) and q_best > 0:
        hess = prob.hessian(x_best, ctx.n / (2.0 * q_best))
        try:
            cov = np.linalg.inv(hess)
            var = np.diag(cov)
            if np.all(np.isfinite(var)) and np.all(var > 0) and np.all(np.linalg.eigvalsh(hess) > 0):
                se_full = np.full(3, np.nan)
                se_full[prob.free] = np.sqrt(var)
                se = tuple(float(v) for v in se_full)
        except np.linalg.LinAlgError:
            se = None

    return EstimationResult(
        theta_hat=theta_hat,
        q_value=q_best,
        n_starts=len(starts),
        converged=converged,
        std_errors=se,
        trace=trace,
        failure_count=prob.failures,
        non_identified=bool("rho" in boundary and full[0] <= 1e-8),
        boundary=boundary,
        diagnostic=dependence_diagnostic(theta_hat, ctx),
    )
