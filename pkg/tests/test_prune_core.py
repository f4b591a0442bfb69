import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wanda.errors import ArgumentError, ShapeError, SingularMatrixError
from wanda.numerics import NormKind, column_norms
from wanda.prune_core import (
    NM,
    PER_INPUT,
    PER_LAYER,
    PER_OUTPUT,
    Grouping,
    Metric,
    Ratio,
    apply_mask,
    auto_lambda,
    compute_scores,
    score_magnitude,
    score_sparsegpt,
    score_wanda,
    select_mask,
    select_nm_mask,
    verify_reduction,
)

from conftest import naive_matmul


class TestScores:
    def test_magnitude(self):
        assert score_magnitude([[-3.0, 2.0]]).tolist() == [[3.0, 2.0]]
        assert not score_magnitude(np.zeros((3, 2))).any()

    def test_magnitude_random(self, rng):
        w = rng.standard_normal((8, 8))
        np.testing.assert_array_equal(score_magnitude(w), [[abs(v) for v in row] for row in w])

    def test_wanda_direct(self):
        assert score_wanda([[1.0, -2.0], [3.0, 4.0]], [1.0, 10.0]).tolist() == [[1.0, 20.0], [3.0, 40.0]]

    def test_wanda_unit_norms_is_magnitude(self, rng):
        w = rng.standard_normal((5, 6))
        np.testing.assert_array_equal(score_wanda(w, np.ones(6)), score_magnitude(w))

    def test_wanda_against_gram_diagonal(self, rng):
        w, x = rng.standard_normal((6, 9)), rng.standard_normal((40, 9))
        expected = np.abs(w) * np.sqrt(np.diagonal(naive_matmul(x.T, x)))
        np.testing.assert_allclose(score_wanda(w, column_norms(x)), expected, rtol=1e-6)

    def test_wanda_length_mismatch(self):
        with pytest.raises(ShapeError):
            score_wanda(np.ones((2, 3)), np.ones(2))

    def test_sparsegpt_identity_hessian(self):
        assert score_sparsegpt([[1.0, -2.0]], np.eye(2), lam=0.0).tolist() == [[1.0, 4.0]]

    def test_sparsegpt_orthogonal_columns_is_wanda_squared(self, rng):
        x = np.diag([0.5, 2.0, 3.0, 7.0])
        w = rng.standard_normal((3, 4))
        np.testing.assert_allclose(score_sparsegpt(w, x, lam=0.0), score_wanda(w, column_norms(x)) ** 2, rtol=1e-12)

    def test_sparsegpt_against_per_column_solve(self, rng):
        x = rng.standard_normal((64, 16))
        w = rng.standard_normal((5, 16))
        lam = 0.01 * np.mean(np.diagonal(x.T @ x))
        h = x.T @ x + lam * np.eye(16)
        dinv = np.array([np.linalg.solve(h, e)[j] for j, e in enumerate(np.eye(16))])
        np.testing.assert_allclose(score_sparsegpt(w, x, lam), w**2 / dinv, rtol=1e-5)
        np.testing.assert_allclose(score_sparsegpt(w, x), w**2 / dinv, rtol=1e-5)
        assert auto_lambda(x) == pytest.approx(lam, rel=1e-12)

    def test_sparsegpt_rank_deficient_without_damping(self):
        x = np.ones((1, 3))
        with pytest.raises(SingularMatrixError, match="lambda > 0"):
            score_sparsegpt(np.ones((2, 3)), x, lam=0.0)

    def test_compute_scores_dispatch(self, rng):
        w, x = rng.standard_normal((3, 4)), rng.standard_normal((10, 4))
        np.testing.assert_array_equal(compute_scores("magnitude", w, x), np.abs(w))
        np.testing.assert_array_equal(compute_scores(Metric.WANDA, w, x, NormKind.L1), score_wanda(w, np.abs(x).sum(0)))


class TestReduction:
    def test_identity_input_is_exact(self, rng):
        assert verify_reduction(rng.standard_normal((7, 5)), np.eye(5)) == 0.0

    def test_random(self, rng):
        assert verify_reduction(rng.standard_normal((64, 64)), rng.standard_normal((256, 64))) < 1e-6

    def test_zero_column(self, rng):
        x = rng.standard_normal((32, 6))
        x[:, 2] = 0
        assert verify_reduction(rng.standard_normal((4, 6)), x) < 1e-6


class TestSelectMask:
    def test_per_output_two_smallest(self):
        assert select_mask([[4.0, 1.0, 3.0, 2.0]], PER_OUTPUT, 0.5).tolist() == [[True, False, True, False]]

    def test_per_layer_global(self):
        assert select_mask([[5.0, 1.0], [2.0, 3.0]], PER_LAYER, Ratio(0.5)).tolist() == [[True, False], [False, True]]

    def test_tie_prunes_lower_index(self):
        assert select_mask(np.ones((2, 2)), PER_OUTPUT, 0.5).tolist() == [[False, True], [False, True]]

    def test_blocked_input_counts(self, rng):
        kept = select_mask(rng.random((16, 32)), Grouping("input", 8), 0.25)
        for b in range(4):
            assert (~kept[:, 8 * b: 8 * b + 8]).sum() == 32

    def test_partial_final_block(self, rng):
        kept = select_mask(rng.random((3, 10)), Grouping("input", 4), 0.5)
        assert (~kept[:, :4]).sum() == 6 and (~kept[:, 4:8]).sum() == 6 and (~kept[:, 8:]).sum() == 3

    def test_blocked_output(self, rng):
        kept = select_mask(rng.random((5, 4)), Grouping("output", 2), 0.5)
        assert [(~kept[r:r + 2]).sum() for r in (0, 2, 4)] == [4, 4, 2]

    def test_algorithm_truncation(self):
        # int(C_in * s) truncation: 0.29 * 100 == 28.999999999999996
        kept = select_mask(np.arange(100.0)[None, :], PER_OUTPUT, 0.29)
        assert (~kept).sum() == int(100 * 0.29) == 28

    def test_zero_sparsity(self, rng):
        assert select_mask(rng.random((4, 4)), PER_LAYER, 0.0).all()

    @pytest.mark.parametrize("bad", [1.0, -0.1])
    def test_bad_ratio(self, bad):
        with pytest.raises(ArgumentError):
            select_mask(np.ones((2, 2)), PER_OUTPUT, bad)

    def test_blocksize_too_large(self):
        with pytest.raises(ArgumentError):
            select_mask(np.ones((2, 2)), Grouping("input", 3), 0.5)

    def test_rejects_negative_scores(self):
        with pytest.raises(ArgumentError):
            select_mask([[-1.0, 2.0]], PER_OUTPUT, 0.5)

    def test_per_input_group_is_a_column(self):
        s = np.array([[1.0, 9.0], [2.0, 8.0], [3.0, 7.0], [4.0, 0.0]])
        assert select_mask(s, PER_INPUT, 0.5).tolist() == [[False, True], [False, True], [True, False], [True, False]]


class TestNM:
    def test_two_of_four(self):
        kept = select_nm_mask([[5, 1, 3, 2, 9, 8, 0, 7]], 2, 4)
        # second block [9, 8, 0, 7]: keep 9 and 8
        assert kept.tolist() == [[True, False, True, False, True, True, False, False]]

    def test_n_equals_m(self, rng):
        assert select_nm_mask(rng.random((3, 8)), 4, 4).all()

    def test_block_counts(self, rng):
        kept = select_nm_mask(rng.random((8, 16)), 2, 4)
        assert (kept.reshape(8, 4, 4).sum(axis=2) == 2).all()

    def test_m_must_divide(self):
        with pytest.raises(ArgumentError):
            select_nm_mask(np.ones((2, 6)), 2, 4)

    def test_parse(self):
        assert NM.parse("4:8") == NM(4, 8)
        with pytest.raises(ArgumentError):
            NM.parse("5:4")


class TestApplyMask:
    def test_all_true(self, rng):
        w = rng.standard_normal((3, 3)).astype(np.float32)
        out = apply_mask(w, np.ones((3, 3), bool))
        assert out.dtype == np.float32 and out.tobytes() == w.tobytes()

    def test_all_false(self, rng):
        out = apply_mask(rng.standard_normal((3, 3)), np.zeros((3, 3), bool))
        assert not out.any() and not np.signbit(out).any()

    def test_idempotent(self, rng):
        w = rng.standard_normal((4, 5))
        m = rng.random((4, 5)) > 0.5
        once = apply_mask(w, m)
        assert apply_mask(once, m).tobytes() == once.tobytes()
        np.testing.assert_array_equal(once[m], w[m])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            apply_mask(np.ones((2, 2)), np.ones((2, 3), bool))


class TestGroupingParse:
    @pytest.mark.parametrize(
        "text,expected",
        [("per-layer", PER_LAYER), ("per-output", PER_OUTPUT), ("per-input", PER_INPUT),
         ("in:128", Grouping("input", 128)), ("out:4", Grouping("output", 4))],
    )
    def test_round_trip(self, text, expected):
        g = Grouping.parse(text)
        assert g == expected
        assert Grouping.parse(str(g)) == g

    @pytest.mark.parametrize("text", ["rows", "in:0", "in:x", "out:"])
    def test_bad(self, text):
        with pytest.raises(ArgumentError):
            Grouping.parse(text)


# ---------------------------------------------------------------- properties

seeds = st.integers(0, 2**32 - 1)


def _problem(seed, rows=None, cols=None):
    r = np.random.default_rng(seed)
    rows = rows or int(r.integers(1, 9))
    cols = cols or int(r.integers(2, 13))
    w = r.standard_normal((rows, cols))
    x = r.standard_normal((int(r.integers(cols + 1, 3 * cols + 2)), cols)) * r.uniform(0.1, 10, cols)
    return r, w, x


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(0.01, 100))
def test_wanda_mask_invariant_to_input_scale(seed, c):
    _, w, x = _problem(seed)
    for g in (PER_OUTPUT, PER_LAYER):
        base = select_mask(score_wanda(w, column_norms(x)), g, 0.5)
        np.testing.assert_array_equal(select_mask(score_wanda(w, column_norms(x * c)), g, 0.5), base)


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(0.01, 100))
def test_row_scale_leaves_per_output_mask(seed, c):
    r, w, x = _problem(seed)
    i = int(r.integers(0, w.shape[0]))
    w2 = w.copy()
    w2[i] *= c
    for metric in Metric:
        m1 = select_mask(compute_scores(metric, w, x), PER_OUTPUT, 0.5)
        m2 = select_mask(compute_scores(metric, w2, x), PER_OUTPUT, 0.5)
        np.testing.assert_array_equal(m1[i], m2[i])


@settings(max_examples=60, deadline=None)
@given(seeds, st.sampled_from([0.25, 0.5, 0.75]))
def test_per_input_masks_agree_across_metrics(seed, s):
    _, w, x = _problem(seed)
    masks = [select_mask(compute_scores(m, w, x), PER_INPUT, s) for m in Metric]
    np.testing.assert_array_equal(masks[0], masks[1])
    np.testing.assert_array_equal(masks[0], masks[2])


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_reduction_identity_holds(seed):
    _, w, x = _problem(seed)
    assert verify_reduction(w, x) < 1e-6


def test_auto_lambda_on_zero_inputs():
    assert auto_lambda(np.zeros((4, 3))) == 1.0
    np.testing.assert_allclose(score_sparsegpt(np.ones((2, 3)), np.zeros((4, 3))), np.ones((2, 3)))
