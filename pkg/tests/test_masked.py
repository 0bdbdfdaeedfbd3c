import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bnmtf import MaskedMatrix, from_dense, i_divergence, mse


def test_counts_fully_observed():
    d = MaskedMatrix.fully_observed(np.ones((2, 2)))
    assert d.n_observed == 4
    assert d.observed_fraction == 1.0


def test_counts_one_missing():
    d = from_dense(np.ones((2, 2)), [[True, True], [True, False]])
    assert d.n_observed == 3
    assert [len(s) for s in d.row_index_sets] == [2, 1]
    assert [len(s) for s in d.column_index_sets] == [2, 1]


def test_observed_fraction_of_large_sparse_matrix():
    # 707 x 139 with 79262 observed cells
    mask = np.zeros(707 * 139, dtype=bool)
    mask[:79262] = True
    d = from_dense(np.zeros((707, 139)), mask.reshape(707, 139))
    assert d.n_observed == 79262
    assert d.observed_fraction == pytest.approx(0.806, abs=1e-3)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        from_dense(np.ones((2, 2)), np.ones((2, 3), dtype=bool))
    with pytest.raises(ValueError):
        from_dense(np.ones((2, 2)), np.zeros((2, 2), dtype=bool))
    with pytest.raises(ValueError):
        MaskedMatrix(np.ones(3), np.ones(3, dtype=bool))


def test_placeholder_zeroed_and_read_only():
    d = from_dense([[1.0, np.nan]], [[True, False]])
    assert d.values[0, 1] == 0.0
    with pytest.raises(ValueError):
        d.values[0, 0] = 5.0


def test_mse_exact_fit_is_zero():
    R = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert mse(MaskedMatrix.fully_observed(R), R) == 0.0


def test_mse_hand_value():
    d = from_dense([[1.0, 2.0], [3.0, 99.0]], [[True, True], [True, False]])
    # errors 1, 0, 1 over three observed cells
    assert mse(d, np.full((2, 2), 2.0)) == pytest.approx(2.0 / 3.0, rel=1e-15)


def test_mse_shape_mismatch():
    with pytest.raises(ValueError):
        mse(MaskedMatrix.fully_observed(np.ones((2, 2))), np.ones((2, 3)))


def test_mse_of_noise_around_truth_is_about_one():
    rng = np.random.default_rng(0)
    truth = rng.exponential(1.0, (100, 10)) @ rng.exponential(1.0, (80, 10)).T
    d = MaskedMatrix.fully_observed(truth + rng.normal(0, 1, truth.shape))
    assert mse(d, truth) == pytest.approx(1.0, abs=0.05)


def test_i_divergence_values():
    R = np.array([[1.0, 2.0]])
    assert i_divergence(MaskedMatrix.fully_observed(R), R) == 0.0
    assert i_divergence(MaskedMatrix.fully_observed([[1.0]]), [[2.0]]) == pytest.approx(
        np.log(0.5) + 1.0, rel=1e-14)
    assert i_divergence(MaskedMatrix.fully_observed([[1.0]]), [[2.0]]) == pytest.approx(0.3069, abs=1e-4)


def test_i_divergence_zero_data_convention():
    # 0 * log(0 / P) counts as 0, leaving only P
    assert i_divergence(MaskedMatrix.fully_observed([[0.0]]), [[2.5]]) == 2.5


def test_i_divergence_rejects_nonpositive_prediction():
    d = from_dense([[1.0, 1.0]], [[True, False]])
    with pytest.raises(ValueError):
        i_divergence(d, [[0.0, 1.0]])
    # unobserved cells are not checked
    assert i_divergence(d, [[1.0, -3.0]]) == 0.0


positive = arrays(np.float64, (3, 4), elements=st.floats(0.01, 100.0))
masks = arrays(np.bool_, (3, 4)).filter(lambda m: m.any())


@settings(max_examples=60, deadline=None)
@given(positive, positive, masks)
def test_metric_properties(R, P, mask):
    d = from_dense(R, mask)
    swapped = from_dense(P, mask)
    assert mse(d, P) == pytest.approx(mse(swapped, R), rel=1e-12)
    div = i_divergence(d, P)
    assert div >= -1e-9
    assert i_divergence(d, np.where(mask, R, 7.0)) == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(positive, positive, masks, arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6)))
def test_metrics_ignore_unobserved_values(R, P, mask, garbage):
    a = from_dense(R, mask)
    b = from_dense(np.where(mask, R, garbage), mask)
    assert mse(a, P) == mse(b, P)
    assert i_divergence(a, P) == i_divergence(b, P)


def test_with_mask_subset_only():
    d = from_dense(np.ones((2, 2)), [[True, False], [True, True]])
    assert d.with_mask([[True, False], [False, False]]).n_observed == 1
    with pytest.raises(ValueError):
        d.with_mask([[False, True], [False, False]])
