import numpy as np
import pytest
from hypothesis import settings

from spgarch.model import ModelSpec, Variant
from spgarch.weights import rook_grid

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid10():
    return rook_grid(10, oriented=True)


@pytest.fixture(params=list(Variant), ids=lambda v: v.name)
def spec(request):
    return ModelSpec(request.param)


def random_weights(rng, n, density=0.3, lower=False):
    """Random non-negative sparse weights with zero diagonal, row-standardised."""
    from spgarch.weights import WeightMatrix, row_standardize

    mask = rng.random((n, n)) < density
    np.fill_diagonal(mask, False)
    if lower:
        mask = np.tril(mask, -1)
    r, c = np.nonzero(mask)
    w = WeightMatrix.from_triplets(n, r, c, rng.random(r.size) + 0.1)
    return row_standardize(w)


def pytest_terminal_summary(terminalreporter):
    import sys

    acc = sys.modules.get("test_acceptance")
    if acc is not None and acc.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acc.RESULTS):
            terminalreporter.write_line(line)
