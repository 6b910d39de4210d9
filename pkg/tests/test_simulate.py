import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spgarch.errors import DomainError, NoConvergence, NotContraction, NumericalFailure
from spgarch.model import ModelSpec, Theta, Variant
from spgarch.simulate import (check_contraction, format_field_csv, read_field_csv,
                              simulate_batch, simulate_field, solve_h, solve_h_direct_hspgarch,
                              solve_h_direct_spgarch, solve_h_fixed_point, write_field_csv)
from spgarch.weights import SiteSet, WeightMatrix, rook_grid

from conftest import random_weights

SPG = ModelSpec(Variant.SPGARCH)
HSP = ModelSpec(Variant.HSPGARCH)
W2X2 = WeightMatrix.from_triplets(2, [1], [0], [1.0])
Z2 = WeightMatrix.zeros(2)


def test_direct_spgarch_hand_example():
    h, rep = solve_h_direct_spgarch(Theta(0.5, 0.0, 1.0), W2X2, Z2, np.array([2.0, 1.0]))
    np.testing.assert_allclose(h, [1.0, 3.0], rtol=0, atol=1e-15)
    assert rep.method == "direct" and rep.residual <= 1e-14


def test_direct_spgarch_identity():
    eps = np.random.default_rng(0).standard_normal(9)
    w = rook_grid(3)
    h, _ = solve_h_direct_spgarch(Theta(0.0, 0.0, 2.5), w, w, eps)
    np.testing.assert_array_equal(h, np.full(9, 2.5))


def test_direct_hspgarch_hand_examples():
    h, _ = solve_h_direct_hspgarch(Theta(0.5, 0.0, 1e-10), W2X2, Z2, np.array([1.0, 1.0]))
    np.testing.assert_allclose(h, [1.0, 1.0], atol=1e-9)
    h, _ = solve_h_direct_hspgarch(Theta(0.5, 0.0, 1e-10), W2X2, Z2, np.array([math.e, 1.0]))
    np.testing.assert_allclose(h, [1.0, math.e], rtol=1e-9)
    w = rook_grid(3)
    h, _ = solve_h_direct_hspgarch(Theta(0.0, 0.0, 0.7), w, w, np.ones(9))
    np.testing.assert_allclose(h, np.full(9, math.exp(0.7)), rtol=1e-15)


def test_hspgarch_errors():
    w = rook_grid(3)
    with pytest.raises(NotContraction):
        solve_h_direct_hspgarch(Theta(0.6, 0.5, 1.0), w, w, np.ones(9))
    eps = np.ones(9)
    eps[4] = 0.0
    with pytest.raises(DomainError) as info:
        solve_h_direct_hspgarch(Theta(0.2, 0.2, 1.0), w, w, eps)
    assert info.value.site == 4


def test_hspgarch_overflow_is_numerical_failure():
    # log h = alpha / (1 - rho - lambda) = 5000 on a constant field
    w = rook_grid(3)
    theta = Theta(0.5, 0.499, 5.0)
    with pytest.raises(NumericalFailure):
        solve_h_direct_hspgarch(theta, w, w, np.ones(9))
    with pytest.raises(NumericalFailure):
        solve_h_fixed_point(ModelSpec(Variant.HSPGARCH), theta, w, w, np.ones(9), tol=1e-8, max_iter=100_000)


def test_oriented_never_errors():
    w = rook_grid(6, oriented=True)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        th = Theta(rng.uniform(0, 0.999), rng.uniform(0, 0.999), rng.uniform(1e-3, 5))
        eps = rng.standard_normal(36) * rng.uniform(0.1, 10)
        h, _ = solve_h_direct_spgarch(th, w, w, eps)
        assert np.all(h >= th.alpha)


def test_fixed_point_trivial():
    w = rook_grid(4)
    h, rep = solve_h_fixed_point(SPG, Theta(0.0, 0.0, 1.3), w, w, np.ones(16))
    np.testing.assert_array_equal(h, np.full(16, 1.3))
    assert rep.iterations == 1


def test_fixed_point_matches_direct_oriented():
    w = rook_grid(10, oriented=True)
    rng = np.random.default_rng(2)
    for _ in range(50):
        th = Theta(rng.uniform(0, 0.999), rng.uniform(0, 0.999), rng.uniform(0.1, 3))
        eps = rng.standard_normal(100)
        hd, _ = solve_h_direct_spgarch(th, w, w, eps)
        hf, rep = solve_h_fixed_point(SPG, th, w, w, eps)
        # absolute 1e-10 for O(1) volatilities; relative once h exceeds 1 (one ulp of 1e6 is 1.2e-10)
        assert np.max(np.abs(hd - hf)) <= 1e-10 * max(1.0, hd.max())
        assert rep.residual <= 10 * 1e-10 * max(1.0, hd.max())


def test_no_convergence_symmetric():
    w = rook_grid(5)
    eps = np.full(25, 3.0)
    with pytest.raises(NoConvergence) as info:
        solve_h_fixed_point(SPG, Theta(0.99, 0.0, 1.0), w, w, eps)
    assert info.value.contraction_estimate >= 1


def test_check_contraction_examples():
    w = rook_grid(4)
    assert check_contraction(SPG, Theta(0, 0, 1), w, w, np.ones(16)) == (0.0, True)
    assert check_contraction(HSP, Theta(0.3, 0.4, 1), w, w, np.ones(16))[0] == pytest.approx(0.7)
    eps = np.ones(16)
    eps[:] = 3.0
    bound, ok = check_contraction(SPG, Theta(0.5, 0.0, 1), w, w, eps)
    assert bound == pytest.approx(4.5) and not ok
    # spARCH ignores lambda entirely
    assert check_contraction(ModelSpec(Variant.SPARCH), Theta(0.0, 0.9, 1), w, w, eps) == (0.0, True)


def test_simulate_determinism_and_identity(spec):
    w = rook_grid(6, oriented=True)
    a = simulate_field(spec, Theta(0.3, 0.3, 1.0), w, w, seed=11)
    b = simulate_field(spec, Theta(0.3, 0.3, 1.0), w, w, seed=11)
    assert format_field_csv(a) == format_field_csv(b)
    np.testing.assert_allclose(a.y**2, a.h * a.eps**2, rtol=1e-13)
    assert np.all(a.h > 0)


def test_trivial_field():
    w = rook_grid(5)
    f = simulate_field(SPG, Theta(0, 0, 2.0), w, w, seed=4)
    np.testing.assert_allclose(f.y, math.sqrt(2.0) * f.eps, rtol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_sign_flip_invariance(seed):
    rng = np.random.default_rng(seed)
    w = rook_grid(5, oriented=True)
    eps = rng.standard_normal(25)
    flip = np.where(rng.random(25) < 0.5, -1.0, 1.0)
    th = Theta(0.5, 0.4, 1.0)
    for spec in (SPG, HSP):
        h1, _ = solve_h(spec, th, w, w, eps)
        h2, _ = solve_h(spec, th, w, w, eps * flip)
        np.testing.assert_array_equal(h1, h2)


def test_batch_matches_single():
    w = rook_grid(7, oriented=True)
    th = Theta(0.4, 0.3, 1.0)
    seeds = [3, 9, 27]
    eps, h, y = simulate_batch(SPG, th, w, w, seeds)
    for r, s in enumerate(seeds):
        f = simulate_field(SPG, th, w, w, seed=s)
        np.testing.assert_array_equal(eps[r], f.eps)
        np.testing.assert_allclose(h[r], f.h, rtol=1e-13)


def test_seed_annotation():
    w = rook_grid(5)
    with pytest.raises(NoConvergence) as info:
        simulate_field(SPG, Theta(0.99, 0.0, 1.0), w, w, seed=123, solver="fixed_point", max_iter=3)
    assert info.value.seed == 123


def test_csv_round_trip(tmp_path):
    w = rook_grid(4, oriented=True)
    f = simulate_field(SPG, Theta(0.2, 0.2, 1.0), w, w, seed=5, sites=SiteSet.grid(4))
    p = tmp_path / "f.csv"
    write_field_csv(f, p)
    assert p.read_text().splitlines()[0] == "site,x,y_coord,eps,h,y"
    g = read_field_csv(p)
    np.testing.assert_array_equal(g.y, f.y)
    np.testing.assert_array_equal(g.h, f.h)
    assert format_field_csv(g) == format_field_csv(f)


def test_general_weights_direct_lu():
    rng = np.random.default_rng(8)
    w = random_weights(rng, 20)
    eps = rng.uniform(0.2, 1.2, 20)
    th = Theta(0.3, 0.3, 1.0)
    hd, _ = solve_h_direct_spgarch(th, w, w, eps)
    hf, _ = solve_h_fixed_point(SPG, th, w, w, eps, tol=1e-13)
    np.testing.assert_allclose(hd, hf, rtol=1e-10)
