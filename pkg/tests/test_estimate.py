import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spgarch.errors import DomainError, EstimationFailed, NotContraction
from spgarch.estimate import (build_context, c_d_solve, dependence_diagnostic, estimate_nls,
                              fitted_h, q_n, q_n_gradient)
from spgarch.model import ModelSpec, Theta, Variant
from spgarch.simulate import simulate_field
from spgarch.weights import WeightMatrix, rook_grid

from conftest import random_weights

SPG = ModelSpec(Variant.SPGARCH)
HSP = ModelSpec(Variant.HSPGARCH)
SPA = ModelSpec(Variant.SPARCH)
C = -1.2703628454614782


def test_context_example():
    w = WeightMatrix.from_triplets(2, [1], [0], [1.0])
    ctx = build_context(SPG, np.array([1.0, 1.0]), w, w)
    np.testing.assert_allclose(ctx.H, [1.2703628, 1.2703628], atol=1e-7)


def test_context_gamma_tilde():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(16)
    w = rook_grid(4, oriented=True)
    ctx = build_context(SPG, y, w, w)
    np.testing.assert_allclose(ctx.gamma_tilde_H, y**2, rtol=1e-14)
    np.testing.assert_allclose(np.exp(ctx.H + ctx.c), y**2, rtol=1e-14)
    ctx = build_context(HSP, y, w, w)
    np.testing.assert_allclose(ctx.gamma_tilde_H, np.log(y**2), rtol=1e-14)


def test_zero_observation():
    w = rook_grid(3)
    y = np.ones(9)
    y[5] = 0.0
    with pytest.raises(DomainError) as info:
        build_context(SPG, y, w, w)
    assert info.value.site == 5


def test_c_d_lambda_zero():
    w = rook_grid(4)
    c, d_apply = c_d_solve(0.0, w, w)
    np.testing.assert_array_equal(c, np.ones(16))
    x = np.arange(16.0)
    np.testing.assert_array_equal(d_apply(x), w @ x)


@pytest.mark.parametrize("lam", [0.0, 0.2, 0.5, 0.9, 0.999])
@pytest.mark.parametrize("d", [2, 5, 12])
def test_geometric_identities(lam, d):
    w = rook_grid(d)
    assert not w.isolated
    c, d_apply = c_d_solve(lam, w, w)
    assert np.max(np.abs(c - 1 / (1 - lam))) <= 1e-12 * max(1.0, 1 / (1 - lam))
    assert np.max(np.abs(d_apply(np.ones(d * d)) - 1 / (1 - lam))) <= 1e-12 * max(1.0, 1 / (1 - lam))


def test_c_d_not_contraction():
    w = WeightMatrix.from_triplets(3, [0, 1, 2], [1, 2, 0], [2.0, 2.0, 2.0])
    with pytest.raises(NotContraction):
        c_d_solve(0.6, w, w)


def test_q_n_rho_zero_closed_form():
    w = rook_grid(6)
    rng = np.random.default_rng(3)
    y = rng.standard_normal(36)
    ctx = build_context(SPG, y, w, w)
    th = Theta(0.0, 0.4, 1.7)
    direct = np.mean((ctx.H - math.log(1.7 / 0.6)) ** 2)
    assert q_n(th, ctx) == pytest.approx(direct, rel=1e-12)


def test_objective_excludes_own_site():
    w = rook_grid(5, oriented=True)
    rng = np.random.default_rng(4)
    y = rng.standard_normal(25)
    th = Theta(0.4, 0.3, 1.0)
    base = fitted_h(th, build_context(SPG, y, w, w))
    for i in (0, 12, 24):
        y2 = y.copy()
        y2[i] *= 7.0
        moved = fitted_h(th, build_context(SPG, y2, w, w))
        assert moved[i] == base[i]


def _fd_check(spec, ctx, rng, n_points):
    worst = 0.0
    for _ in range(n_points):
        th = Theta(rng.uniform(0.05, 0.9), rng.uniform(0.05, 0.9), rng.uniform(0.2, 3.0))
        g = q_n_gradient(th, ctx)
        x = th.as_array()
        fd = np.empty(3)
        for j in range(3):
            e = np.zeros(3)
            e[j] = 1e-6
            fd[j] = (q_n(Theta.from_array(x + e), ctx) - q_n(Theta.from_array(x - e), ctx)) / 2e-6
        worst = max(worst, np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)))
    return worst


@pytest.mark.parametrize("spec", [SPG, HSP], ids=["spGARCH", "H-spGARCH"])
def test_gradient_finite_differences(spec):
    w = rook_grid(8, oriented=True)
    f = simulate_field(spec, Theta(0.3, 0.3, 1.0), w, w, seed=17)
    ctx = build_context(spec, f.y, w, w)
    assert _fd_check(spec, ctx, np.random.default_rng(5), 30) <= 1e-5


def test_gradient_general_weights():
    rng = np.random.default_rng(6)
    w1 = random_weights(rng, 30)
    w2 = random_weights(rng, 30)
    y = rng.standard_normal(30)
    ctx = build_context(SPG, y, w1, w2)
    assert _fd_check(SPG, ctx, rng, 10) <= 1e-5


def test_gradient_at_rho_zero():
    w = rook_grid(6, oriented=True)
    y = np.random.default_rng(7).standard_normal(36)
    ctx = build_context(SPG, y, w, w)
    th = Theta(0.0, 0.3, 1.2)
    g = q_n_gradient(th, ctx)
    e = 1e-6
    fwd = (q_n(Theta(e, 0.3, 1.2), ctx) - q_n(th, ctx)) / e
    assert g[0] == pytest.approx(fwd, rel=1e-4)


@given(st.integers(0, 2**32 - 1))
def test_sign_invariance(seed):
    rng = np.random.default_rng(seed)
    w = rook_grid(4, oriented=True)
    y = rng.standard_normal(16)
    flip = np.where(rng.random(16) < 0.5, -1.0, 1.0)
    th = Theta(0.3, 0.2, 0.8)
    assert q_n(th, build_context(SPG, y, w, w)) == q_n(th, build_context(SPG, y * flip, w, w))


@pytest.fixture(scope="module")
def fit15():
    w = rook_grid(15, oriented=True)
    f = simulate_field(SPG, Theta(0.5, 0.5, 1.0), w, w, seed=2024)
    return w, f, estimate_nls(SPG, f.y, w, w)


def test_estimate_basic(fit15):
    w, f, res = fit15
    ctx = build_context(SPG, f.y, w, w)
    assert res.q_value == q_n(res.theta_hat, ctx)
    assert res.n_starts == 27
    assert res.converged
    assert abs(res.theta_hat.rho - 0.5) <= 0.7
    qs = [q for _, q in res.trace]
    assert all(a >= b for a, b in zip(qs, qs[1:]))
    assert qs[-1] == pytest.approx(res.q_value, rel=1e-12)
    if not res.boundary:
        assert np.max(np.abs(q_n_gradient(res.theta_hat, ctx))) <= 1e-6
    assert res.std_errors is None or all(s > 0 for s in res.std_errors)
    assert math.isfinite(res.diagnostic)


def test_estimate_deterministic(fit15):
    w, f, res = fit15
    again = estimate_nls(SPG, f.y, w, w)
    assert again.to_json(include_trace=True) == res.to_json(include_trace=True)


def test_json_keys(fit15):
    out = fit15[2].to_json()
    assert set(out) == {"rho", "lambda", "alpha", "q", "converged", "se", "failures", "non_identified"}
    assert "trace" in fit15[2].to_json(include_trace=True)


def test_unidentified_lambda():
    w = rook_grid(15, oriented=True)
    f = simulate_field(SPG, Theta(0.0, 0.0, 1.0), w, w, seed=99)
    res = estimate_nls(SPG, f.y, w, w)
    level = res.theta_hat.alpha / (1 - res.theta_hat.lam)
    assert 0.6 < level < 1.6
    assert res.non_identified == (res.theta_hat.rho <= 1e-8)


def test_sparch_fixes_lambda():
    w = rook_grid(10, oriented=True)
    f = simulate_field(SPA, Theta(0.4, 0.0, 1.0), w, w, seed=8)
    res = estimate_nls(SPA, f.y, w, w)
    assert res.theta_hat.lam == 0.0 and res.n_starts == 9
    assert res.std_errors is None or math.isnan(res.std_errors[1])


def test_hspgarch_recovers_roughly():
    w = rook_grid(15, oriented=True)
    f = simulate_field(HSP, Theta(0.3, 0.3, 1.0), w, w, seed=5)
    res = estimate_nls(HSP, f.y, w, w)
    assert res.converged
    assert abs(res.theta_hat.rho - 0.3) < 0.4


def test_all_starts_infeasible():
    w = rook_grid(4, oriented=True)
    y = np.random.default_rng(1).standard_normal(16)
    with pytest.raises(EstimationFailed) as info:
        estimate_nls(SPG, y, w, w, c_override=float("nan"))
    assert len(info.value.diagnostics) == 27
    with pytest.raises(EstimationFailed) as info:
        estimate_nls(SPG, y, w, w, c_override=float("nan"), starts=[(0.1, 0.1, 1.0), (0.5, 0.5, 2.0)])
    assert [d["status"] for d in info.value.diagnostics] == ["infeasible start"] * 2


def test_too_few_observations():
    w = rook_grid(1)
    with pytest.raises(ValueError):
        estimate_nls(SPG, np.array([1.0]), w, w)


def test_diagnostic_nonnegative():
    w = rook_grid(6, oriented=True)
    y = np.random.default_rng(2).standard_normal(36)
    ctx = build_context(SPG, y, w, w)
    assert dependence_diagnostic(Theta(0.3, 0.3, 1.0), ctx) >= 0
