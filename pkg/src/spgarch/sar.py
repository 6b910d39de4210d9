"""Spatial autoregressive mean model and the SAR + spGARCH residual pipeline.

``Y = psi W Y + X beta + u`` is fitted by concentrated maximum likelihood;
``beta`` and ``sigma2`` are profiled out and the one-dimensional likelihood
in ``psi`` is maximised on the stationarity interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from spgarch.diagnostics import HeteroscedasticityReport, residual_heteroscedasticity_report
from spgarch.errors import NumericalFailure, PipelineError, RankDeficient
from spgarch.estimate import EstimationResult, build_context, estimate_nls, fitted_h
from spgarch.model import ModelSpec, Theta
from spgarch.rng import derive_seed, uniforms
from spgarch.simulate import simulate_field
from spgarch.weights import SiteSet, WeightMatrix, delaunay_contiguity, orient, row_standardize

__all__ = ["SarResult", "fit_sar", "log_det", "PipelineResult", "sar_spgarch_pipeline",
           "SyntheticData", "synthetic_pipeline_data"]


@dataclass
class SarResult:
    psi: float
    beta: np.ndarray
    sigma2: float
    log_lik: float
    aic: float
    residuals: np.ndarray
    se_beta: np.ndarray | None = None
    se_psi: float | None = None
    interval: tuple = (-math.inf, math.inf)

    def to_json(self):
        def f(v):
            return None if v is None or not math.isfinite(v) else float(v)

        return {
            "psi": self.psi,
            "se_psi": f(self.se_psi),
            "beta": [float(b) for b in self.beta],
            "se_beta": None if self.se_beta is None else [f(s) for s in self.se_beta],
            "sigma2": self.sigma2,
            "log_lik": self.log_lik,
            "aic": self.aic,
        }


def _eigenvalues(w: WeightMatrix) -> np.ndarray:
    try:
        return np.linalg.eigvals(w.toarray())
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc


def log_det(psi: float, omega: np.ndarray) -> float:
    """``log|I - psi W|`` from the eigenvalues ``omega`` of ``W``."""
    return float(np.sum(np.log(1.0 - psi * omega)).real)


def _interval(omega: np.ndarray) -> tuple[float, float]:
    real = omega[np.abs(omega.imag) <= 1e-10 * max(1.0, np.abs(omega).max())].real
    lo = real.min() if real.size else 0.0
    hi = real.max() if real.size else 0.0
    return (1.0 / lo if lo < 0 else -math.inf, 1.0 / hi if hi > 0 else math.inf)


def fit_sar(Y, X, W: WeightMatrix) -> SarResult:
    """Concentrated maximum-likelihood fit of the SAR model.

    Parameters
    ----------
    Y : array_like, shape (n,)
    X : array_like, shape (n, p)
        Design matrix; include the intercept column explicitly.
    W : WeightMatrix
        Row-standardised spatial weights for the lag term.

    Returns
    -------
    SarResult
        Standard errors come from the inverse observed information of
        ``(beta, psi, sigma2)`` at the optimum.
    """
    y = np.asarray(Y, dtype=np.float64).ravel()
    x = np.asarray(X, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, p = x.shape
    if y.shape[0] != n or W.n != n:
        raise ValueError("Y, X and W must agree on the number of observations")
    if not n > p + 1:
        raise ValueError("need more observations than parameters")
    if np.linalg.matrix_rank(x) < p:
        raise RankDeficient("design matrix is rank deficient")

    wy = W @ y
    xtx_inv = np.linalg.inv(x.T @ x)
    proj = xtx_inv @ x.T
    e0 = y - x @ (proj @ y)
    el = wy - x @ (proj @ wy)

    if W.nnz == 0:
        omega = np.zeros(n)
        psi = 0.0
        interval = (-math.inf, math.inf)
    else:
        omega = _eigenvalues(W)
        interval = _interval(omega)
        lo, hi = interval
        pad = 1e-9
        lo_b = max(lo, -1e6) + pad * max(1.0, abs(lo) if math.isfinite(lo) else 1.0)
        hi_b = min(hi, 1e6) - pad * max(1.0, abs(hi) if math.isfinite(hi) else 1.0)

        def neg_profile(psi):
            e = e0 - psi * el
            s2 = float(e @ e) / n
            if not s2 > 0:
                return math.inf
            return 0.5 * n * math.log(s2) - log_det(psi, omega)

        opt = minimize_scalar(neg_profile, bounds=(lo_b, hi_b), method="bounded",
                              options={"xatol": 1e-10, "maxiter": 500})
        psi = float(opt.x)

    resid = e0 - psi * el
    beta = proj @ (y - psi * wy)
    sigma2 = float(resid @ resid) / n
    if sigma2 > 0:
        ll = -0.5 * n * (math.log(2.0 * math.pi * sigma2) + 1.0) + log_det(psi, omega)
    else:
        # exact fit; left for the residual diagnostics to reject
        ll = math.inf
    aic = 2.0 * (p + 2) - 2.0 * ll

    se_beta = se_psi = None
    if not sigma2 > 0:
        pass
    elif W.nnz:
        tr_g2 = float(np.sum((omega / (1.0 - psi * omega)) ** 2).real)
        info = np.zeros((p + 2, p + 2))
        info[:p, :p] = x.T @ x / sigma2
        info[:p, p] = info[p, :p] = x.T @ wy / sigma2
        info[p, p] = tr_g2 + float(wy @ wy) / sigma2
        info[p, p + 1] = info[p + 1, p] = float(wy @ resid) / sigma2**2
        info[p + 1, p + 1] = n / (2.0 * sigma2**2)
        try:
            cov = np.linalg.inv(info)
            se = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
            se_beta, se_psi = se[:p], float(se[p])
        except np.linalg.LinAlgError:
            pass
    else:
        se_beta = np.sqrt(np.diag(xtx_inv) * sigma2)
    return SarResult(psi, beta, sigma2, ll, aic, resid, se_beta, se_psi, interval)


@dataclass
class PipelineResult:
    sar: SarResult
    pre: HeteroscedasticityReport
    spgarch: EstimationResult
    post: HeteroscedasticityReport
    h_hat: np.ndarray = field(repr=False)

    def summary(self):
        return {
            "aic": self.sar.aic,
            "moran_resid": self.pre.levels.to_json(),
            "moran_sq_resid": self.post.sq.to_json(),
            "moran_sq_resid_prefit": self.pre.sq.to_json(),
            "avg_h": float(self.h_hat.mean()),
            "max_h": float(self.h_hat.max()),
        }

    def to_json(self):
        sar = self.sar.to_json()
        return {
            "mean_model": {"beta": sar["beta"], "se_beta": sar["se_beta"], "sigma2": sar["sigma2"],
                           "log_lik": sar["log_lik"]},
            "sar_psi": {"psi": sar["psi"], "se": sar["se_psi"]},
            "spgarch": self.spgarch.to_json(),
            "summary": self.summary(),
            "diagnostics": {"pre": self.pre.to_json(), "post": self.post.to_json()},
        }


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


def sar_spgarch_pipeline(Y, X, W_mean: WeightMatrix, spec: ModelSpec, W1s: WeightMatrix,
                         W2s: WeightMatrix, permutations: int = 999, seed: int = 0,
                         threads: int = 1, **estimate_options) -> PipelineResult:
    """SAR fit, then a spatial GARCH fit to the SAR residuals.

    Moran diagnostics (on ``W_mean``) are computed for the SAR residuals and
    for the standardised residuals ``u / sqrt(h_hat)``. Any failure is
    re-raised as :class:`PipelineError` carrying the stage name.
    """
    sar = _stage("sar", fit_sar, Y, X, W_mean)
    kw = dict(permutations=permutations, seed=seed, threads=threads)
    pre = _stage("diagnostics", residual_heteroscedasticity_report, sar.residuals, W_mean, **kw)
    est = _stage("spgarch", estimate_nls, spec, sar.residuals, W1s, W2s, **estimate_options)
    h_hat = _stage("spgarch", lambda: fitted_h(est.theta_hat, build_context(spec, sar.residuals, W1s, W2s)))
    post = _stage("diagnostics_post", residual_heteroscedasticity_report,
                  sar.residuals / np.sqrt(h_hat), W_mean, **kw)
    return PipelineResult(sar, pre, est, post, h_hat)


@dataclass
class SyntheticData:
    Y: np.ndarray
    X: np.ndarray
    sites: SiteSet
    W_mean: WeightMatrix
    W1s: WeightMatrix
    W2s: WeightMatrix
    u: np.ndarray
    h: np.ndarray


def synthetic_pipeline_data(seed: int, n: int = 190, psi: float = 0.6,
                            theta: Theta = Theta(0.2, 0.7, 0.02), beta=(0.8,),
                            spec: ModelSpec = ModelSpec()) -> SyntheticData:
    """SAR data with spatial GARCH errors on a random planar map.

    Sites are uniform on the unit square, sorted by ``(y, x)``; the mean model
    uses row-standardised Delaunay contiguity and the error process uses its
    oriented (lower-triangular) part for both weight matrices.
    """
    xy = uniforms(derive_seed(seed, 1), 2 * n).reshape(n, 2)
    xy = xy[np.lexsort((xy[:, 0], xy[:, 1]))]
    sites = SiteSet(xy)
    adj = delaunay_contiguity(sites)
    w_mean = row_standardize(adj)
    w_err = orient(adj)
    fld = simulate_field(spec, theta, w_err, w_err, seed=derive_seed(seed, 2), sites=sites)
    beta = np.asarray(beta, dtype=np.float64)
    x = np.ones((n, 1)) if beta.size == 1 else np.column_stack(
        [np.ones(n), uniforms(derive_seed(seed, 3), n * (beta.size - 1)).reshape(n, -1)])
    rhs = x @ beta + fld.y
    a = np.eye(n) - psi * w_mean.toarray()
    y = np.linalg.solve(a, rhs)
    return SyntheticData(y, x, sites, w_mean, w_err, w_err, fld.y, fld.h)
