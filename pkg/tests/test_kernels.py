import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wanda import kernels


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")
    assert "python" in kernels.available_backends()


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_prune_lowest_tie_breaks_to_lower_index(backend):
    kept = kernels.prune_lowest(np.ones((2, 4)), 2)
    assert kept.tolist() == [[False, False, True, True]] * 2


def test_prune_lowest_extremes(backend):
    s = np.arange(6.0).reshape(2, 3)
    assert kernels.prune_lowest(s, 0).all()
    assert not kernels.prune_lowest(s, 3).any()


@settings(max_examples=200, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 20)), elements=st.integers(0, 5).map(float)),
    st.integers(0, 20),
)
def test_backends_agree_on_selection(scores, k):
    k = min(k, scores.shape[1])
    expected = None
    for name in kernels.available_backends():
        got = kernels.prune_lowest(scores, k, backend=name)
        assert (~got).sum(axis=1).tolist() == [k] * scores.shape[0]
        if expected is not None:
            np.testing.assert_array_equal(got, expected)
        expected = got


@pytest.mark.parametrize("n,k", [(6, 0), (6, 1), (6, 3), (6, 6), (9, 4)])
def test_subset_errors_match_direct_enumeration(backend, rng, n, k):
    x = rng.standard_normal((20, n))
    w = rng.standard_normal(n)
    got = kernels.subset_sq_errors(x.T @ x, w, k)
    expected = [np.linalg.norm(x[:, list(p)] @ w[list(p)]) ** 2 for p in itertools.combinations(range(n), k)]
    np.testing.assert_allclose(got, expected, rtol=1e-9, atol=1e-12)
