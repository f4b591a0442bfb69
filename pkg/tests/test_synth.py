import hashlib

import numpy as np
import pytest

from wanda.errors import ArgumentError
from wanda.model_store import save_calibration, save_checkpoint
from wanda.numerics import column_norms
from wanda.prune_core import PER_OUTPUT, score_magnitude, score_wanda, select_mask
from wanda.synth import gen_outlier_batch, gen_random_model, outlier_columns

# frozen from a reference run; guards cross-run and cross-platform reproducibility
MODEL_8_16_4_SEED7_SHA256 = "0d92501c7d2ba4c08ebc7ce43c4320382a2f1d4015e19f6579aeae652c3e2e10"
CALIB_32x16_SEED3_SHA256 = "63dc4aded938e8e41f1bcea1bfed4bcda63256805cf94dcf6c688bd632099610"


def test_single_layer_has_no_activation():
    m = gen_random_model([2, 2], 5)
    assert len(m.layers) == 1
    assert m.layers[0].activation.value == "none"


def test_shapes_and_activations():
    m = gen_random_model([8, 16, 4], 7)
    assert [l.weight.shape for l in m.layers] == [(16, 8), (4, 16)]
    assert [l.activation.value for l in m.layers] == ["relu", "none"]


def test_model_bytes_are_reproducible(tmp_path):
    save_checkpoint(gen_random_model([8, 16, 4], 7), tmp_path / "a")
    save_checkpoint(gen_random_model([8, 16, 4], 7), tmp_path / "b")
    a = (tmp_path / "a" / "weights.bin").read_bytes()
    assert a == (tmp_path / "b" / "weights.bin").read_bytes()
    assert hashlib.sha256(a).hexdigest() == MODEL_8_16_4_SEED7_SHA256


def test_calibration_bytes_are_reproducible(tmp_path):
    save_calibration(gen_outlier_batch(32, 16, 1 / 16, 100, 3), tmp_path / "c.bin")
    assert hashlib.sha256((tmp_path / "c.bin").read_bytes()).hexdigest() == CALIB_32x16_SEED3_SHA256


def test_weight_scale():
    w = gen_random_model([1024, 1024], 0).layers[0].weight
    assert abs(w.std() * np.sqrt(1024) - 1.0) < 0.2
    assert abs(w.mean()) < 0.01


@pytest.mark.parametrize("dims", [[], [4], [3, 0]])
def test_bad_dims(dims):
    with pytest.raises(ArgumentError):
        gen_random_model(dims, 0)


def test_different_seeds_differ():
    a = gen_random_model([4, 4], 0).layers[0].weight
    b = gen_random_model([4, 4], 1).layers[0].weight
    assert not np.array_equal(a, b)


class TestOutlierBatch:
    def test_no_outliers(self):
        norms = column_norms(gen_outlier_batch(512, 16, 0.0, 100, 0).data)
        # chi distribution with 512 dof: norms near sqrt(512) with sd ~0.7
        assert np.all(np.abs(norms - np.sqrt(512)) < 6)

    def test_one_outlier_column(self):
        b = gen_outlier_batch(512, 16, 1 / 16, 100, 0)
        cols = outlier_columns(16, 1 / 16, 0)
        assert cols.size == 1
        norms = column_norms(b.data)
        ratio = norms[cols[0]] / np.median(norms)
        assert 100 / 3 <= ratio <= 300
        assert np.argmax(norms) == cols[0]

    @pytest.mark.parametrize("c_in,frac,count", [(64, 1 / 16, 4), (10, 0.25, 3), (10, 0.15, 2), (7, 1.0, 7)])
    def test_outlier_count_rounds(self, c_in, frac, count):
        assert outlier_columns(c_in, frac, 1).size == count
        assert len(set(outlier_columns(c_in, frac, 1).tolist())) == count

    def test_outlier_columns_constant_across_tokens(self):
        b = gen_outlier_batch(200, 32, 0.125, 100, 4).data
        base = gen_outlier_batch(200, 32, 0.0, 100, 4).data
        scaled = np.flatnonzero(np.any(b != base, axis=0))
        np.testing.assert_array_equal(scaled, outlier_columns(32, 0.125, 4))
        np.testing.assert_allclose(b[:, scaled], base[:, scaled] * 100, rtol=1e-6)

    def test_all_columns_scaled_leaves_wanda_mask_unchanged(self):
        # uniform scaling of every feature cannot change any within-row ranking
        w = gen_random_model([32, 16], 2).layers[0].weight
        plain = gen_outlier_batch(256, 32, 0.0, 100, 2).data
        scaled = gen_outlier_batch(256, 32, 1.0, 100, 2).data
        m_plain = select_mask(score_wanda(w, column_norms(plain)), PER_OUTPUT, 0.5)
        m_scaled = select_mask(score_wanda(w, column_norms(scaled)), PER_OUTPUT, 0.5)
        np.testing.assert_array_equal(m_plain, m_scaled)
        # and with a constant per-column norm the Wanda mask is the magnitude mask
        const = np.full(32, column_norms(scaled).mean())
        np.testing.assert_array_equal(
            select_mask(score_wanda(w, const), PER_OUTPUT, 0.5), select_mask(score_magnitude(w), PER_OUTPUT, 0.5)
        )

    def test_longer_batch_extends_shorter(self):
        short = gen_outlier_batch(8, 16, 1 / 16, 100, 9).data
        long = gen_outlier_batch(64, 16, 1 / 16, 100, 9).data
        np.testing.assert_array_equal(long[:8], short)

    @pytest.mark.parametrize("frac", [-0.1, 1.5])
    def test_bad_fraction(self, frac):
        with pytest.raises(ArgumentError):
            gen_outlier_batch(4, 4, frac, 100, 0)

    def test_reproducible(self):
        a = gen_outlier_batch(16, 8, 0.25, 50, 11).data
        assert a.tobytes() == gen_outlier_batch(16, 8, 0.25, 50, 11).data.tobytes()
