import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tscp.core_stats import (ScalingParams, augmented_moments, conformal_quantile, moments,
                             quantile_rank, standardized_max)
from tscp.errors import DegenerateDimension, InvalidLevel

finite = st.floats(0, 1e6, allow_nan=False, allow_infinity=False)
levels = st.floats(0.01, 0.99)


def sort_oracle(scores, alpha):
    k = math.ceil(round((1 - alpha) * (len(scores) + 1), 9))
    return (sorted(scores) + [math.inf])[k - 1]


@pytest.mark.parametrize("n, alpha, k", [(19, 0.1, 18), (9, 0.1, 9), (8, 0.1, 9),
                                         (100, 0.1, 91), (4, 0.5, 3), (1, 0.5, 1)])
def test_quantile_rank(n, alpha, k):
    assert quantile_rank(n, alpha) == k


def test_rank_absorbs_float_slack():
    # (1 - 0.7) * 10 evaluates to 3.0000000000000004
    assert (1 - 0.7) * 10 > 3
    assert quantile_rank(9, 0.7) == 3


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_invalid_level(alpha):
    with pytest.raises(InvalidLevel):
        conformal_quantile([1.0, 2.0], alpha)


def test_quantile_saturates_to_inf():
    assert conformal_quantile(np.arange(5.0), 0.1) == math.inf
    assert conformal_quantile(np.arange(9.0), 0.1) == 8.0


def test_quantile_rejects_nonfinite():
    with pytest.raises(ValueError):
        conformal_quantile([1.0, np.inf], 0.1)
    with pytest.raises(ValueError):
        conformal_quantile([], 0.1)


@given(arrays(float, st.integers(1, 200), elements=st.floats(-1e6, 1e6)), levels)
def test_quantile_matches_sort_oracle(scores, alpha):
    assert conformal_quantile(scores, alpha) == sort_oracle(list(scores), alpha)


def test_selection_and_sort_paths_agree(rng):
    s = rng.standard_normal(1001)
    for alpha in (0.01, 0.1, 0.37):
        assert conformal_quantile(s, alpha) == sort_oracle(list(s), alpha)


def test_moments_use_divisor_n():
    p = moments(np.array([[1.0], [2.0], [3.0]]))
    assert p.n == 3
    assert p.mean[0] == 2.0
    assert p.std[0] == pytest.approx(math.sqrt(2 / 3), rel=1e-15)


def test_constant_column_is_degenerate():
    e = np.column_stack([np.arange(5.0), np.full(5, 0.3)])
    with pytest.raises(DegenerateDimension) as info:
        moments(e)
    assert info.value.dimension == 1


@pytest.mark.parametrize("kwargs", [dict(n=1, mean=[1.0], std=[1.0]),
                                    dict(n=5, mean=[1.0], std=[0.0]),
                                    dict(n=5, mean=[-1.0], std=[1.0]),
                                    dict(n=5, mean=[1.0, 2.0], std=[1.0])])
def test_scaling_params_validation(kwargs):
    with pytest.raises(ValueError):
        ScalingParams(**kwargs)


def test_scaling_params_are_read_only():
    p = ScalingParams(3, [1.0], [0.5])
    with pytest.raises(ValueError):
        p.mean[0] = 2.0


@pytest.mark.parametrize("z, mean, var", [(6.0, 3.0, 14 / 3), (0.0, 1.5, 5 / 3),
                                          (2.0, 2.0, 2 / 3)])
def test_augmented_moments_known_values(z, mean, var):
    p = moments(np.array([1.0, 2.0, 3.0]))
    m, s = augmented_moments(p, z, 0)
    assert m == pytest.approx(mean, rel=1e-14)
    assert s == pytest.approx(math.sqrt(var), rel=1e-14)


@given(arrays(float, st.integers(2, 40), elements=st.floats(0, 1e3)), finite)
def test_augmented_moments_match_recomputation(col, z):
    if np.ptp(col) < 1e-6:
        return
    p = moments(col)
    pooled = np.append(col, z)
    m, s = augmented_moments(p, z, 0)
    ref_m = math.fsum(pooled) / pooled.size
    ref_s = math.sqrt(math.fsum((pooled - ref_m) ** 2) / col.size)
    assert m == pytest.approx(ref_m, rel=1e-9, abs=1e-9)
    assert s == pytest.approx(ref_s, rel=1e-9)


def test_augmented_moments_vectorize(rng):
    e = rng.exponential(size=(20, 3))
    p = moments(e)
    z = np.array([0.5, 1.0, 7.0])
    m, s = augmented_moments(p, z)
    for j in range(3):
        assert (m[j], s[j]) == pytest.approx(augmented_moments(p, z[j], j))


def test_standardized_max_vector_and_table():
    mean, std = np.array([1.0, 0.0]), np.array([2.0, 1.0])
    assert standardized_max([3.0, 0.5], mean, std) == 1.0
    out = standardized_max(np.array([[3.0, 0.5], [1.0, 4.0]]), mean, std)
    np.testing.assert_array_equal(out, [1.0, 4.0])
