import numpy as np
import pytest
from hypothesis import given, strategies as st

from spgarch.errors import DegenerateDistance, ParseError
from spgarch.weights import (SiteSet, WeightMatrix, delaunay_contiguity, format_weights,
                             inverse_distance, matrix_inf_norm, orient, read_weights,
                             rook_grid, row_standardize, write_weights)


def test_rook_d1_is_empty():
    w = rook_grid(1, oriented=False)
    assert w.n == 1 and w.nnz == 0


def test_rook_d2_symmetric_corners():
    a = rook_grid(2, oriented=False).toarray()
    assert np.array_equal(a, 0.5 * np.array([[0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0]]))


def test_rook_d3_oriented_rows():
    w = rook_grid(3, oriented=True)
    a = w.toarray()
    assert not a[0].any()
    assert w.isolated == (0,)
    expected = np.zeros(9)
    expected[[1, 3]] = 0.5
    assert np.array_equal(a[4], expected)


@pytest.mark.parametrize("d", range(1, 31))
def test_rook_structure_exhaustive(d):
    sym = rook_grid(d, oriented=False)
    binary = (sym.toarray() > 0).astype(float)
    assert np.array_equal(binary, binary.T)
    assert rook_grid(d, oriented=True).is_strictly_lower


def test_inverse_distance_pairs():
    w = inverse_distance(SiteSet(np.array([[0.0, 0.0], [1.0, 0.0]])), k=2)
    assert np.array_equal(w.toarray(), [[0, 1], [1, 0]])
    w = inverse_distance(SiteSet(np.array([[0.0], [2.0]])), k=1)
    assert np.array_equal(w.toarray(), [[0, 0.5], [0.5, 0]])


def test_inverse_distance_collinear():
    a = inverse_distance(SiteSet(np.array([[0.0], [1.0], [2.0]])), k=1).toarray()
    assert a[0, 2] == 0.5 and a[0, 1] == 1.0
    assert not inverse_distance(SiteSet(np.array([[0.0], [1.0], [2.0]])), k=1).row_standardized


def test_inverse_distance_cutoff():
    a = inverse_distance(SiteSet(np.array([[0.0], [1.0], [2.0]])), k=1, cutoff=1.5).toarray()
    assert a[0, 2] == 0 and a[0, 1] == 1


def test_inverse_distance_coincident():
    with pytest.raises(DegenerateDistance) as info:
        inverse_distance(SiteSet(np.array([[0.0, 1.0], [2.0, 2.0], [0.0, 1.0]])))
    assert info.value.pair == (0, 2)


def test_row_standardize_examples():
    w = WeightMatrix.from_triplets(4, [0, 0, 0], [1, 2, 3], [1.0, 1.0, 2.0])
    s = row_standardize(w)
    assert np.array_equal(s.toarray()[0], [0, 0.25, 0.25, 0.5])
    assert s.row_standardized
    # the other rows are isolated and stay zero
    assert s.isolated == (1, 2, 3)
    again = row_standardize(s)
    assert np.max(np.abs(again.toarray() - s.toarray())) <= 1e-15


def test_inf_norm_examples():
    assert matrix_inf_norm(WeightMatrix.zeros(3)) == 0
    assert matrix_inf_norm(rook_grid(4)) == pytest.approx(1.0, abs=1e-15)
    w = WeightMatrix.from_triplets(3, [0, 1, 1], [1, 0, 2], [0.3, 0.9, 0.4])
    assert matrix_inf_norm(w) == pytest.approx(1.3, abs=1e-15)


def test_validation():
    with pytest.raises(ValueError):
        WeightMatrix.from_triplets(2, [0], [0], [1.0])
    with pytest.raises(ValueError):
        WeightMatrix.from_triplets(2, [0], [1], [-1.0])
    with pytest.raises(ValueError):
        WeightMatrix.from_triplets(2, [0, 0], [1, 1], [1.0, 1.0])


def test_read_example(tmp_path):
    p = tmp_path / "w.txt"
    p.write_text("3\n0 1 0.5\n1 0 0.5\n")
    w = read_weights(p)
    assert w.n == 3 and w.nnz == 2


@pytest.mark.parametrize("body,line", [
    ("3\n0 0 1.0\n", 2),
    ("3\n# comment\n0 1 -0.5\n", 3),
    ("3\n0 1\n", 2),
    ("3\n0 5 1.0\n", 2),
    ("x\n", 1),
])
def test_read_errors(tmp_path, body, line):
    p = tmp_path / "w.txt"
    p.write_text(body)
    with pytest.raises(ParseError) as info:
        read_weights(p)
    assert info.value.line == line


@given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.booleans())
def test_round_trip(n, seed, standardize):
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < 0.4
    np.fill_diagonal(mask, False)
    r, c = np.nonzero(mask)
    w = WeightMatrix.from_triplets(n, r, c, rng.random(r.size) * 3)
    if standardize:
        w = row_standardize(w)
    import tempfile, os
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "w.txt")
        write_weights(w, path)
        back = read_weights(path)
        write_weights(back, path)
        assert read_weights(path) == back
    assert back == w
    assert format_weights(back) == format_weights(w)


@given(st.integers(2, 15), st.integers(0, 2**32 - 1))
def test_standardize_properties(n, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < 0.5
    np.fill_diagonal(mask, False)
    r, c = np.nonzero(mask)
    w = row_standardize(WeightMatrix.from_triplets(n, r, c, rng.random(r.size) + 0.01))
    sums = w.row_sums()
    nonempty = sums > 0
    assert np.all(np.abs(sums[nonempty] - 1) <= 1e-12)
    if nonempty.all():
        assert matrix_inf_norm(w) == pytest.approx(1.0, abs=1e-12)
    assert row_standardize(w) == w


def test_orient_and_delaunay():
    rng = np.random.default_rng(3)
    sites = SiteSet(rng.random((40, 2)))
    adj = delaunay_contiguity(sites)
    assert adj.is_symmetric()
    o = orient(adj)
    assert o.is_strictly_lower and o.row_standardized
    assert 0 in o.isolated
