import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tscp.core_stats import ScalingParams, augmented_moments, moments
from tscp.link import critical_radius, omega
from tscp.reference import omega_bisection


def ctx(n=3, mean=1.0, std=0.5):
    return ScalingParams(n, [mean], [std])


def test_known_value():
    # n=3, mean 1, std .5, c=1: 1 + .5 * 4 / sqrt(5)
    assert omega(ctx(), 1.0, 0) == pytest.approx(1 + 0.5 * math.sqrt(16 / 5), rel=1e-14)


def test_zero_bound_gives_mean():
    assert omega(ctx(), 0.0, 0) == 1.0


@pytest.mark.parametrize("n", [2, 5, 100])
def test_branches_at_critical_radius(n):
    p = ctx(n=n)
    crit = critical_radius(n)
    assert omega(p, crit, 0) == math.inf
    assert omega(p, 1.5 * crit, 0) == math.inf
    assert omega(p, -crit, 0) == 0.0
    assert omega(p, -2 * crit, 0) == 0.0
    assert math.isfinite(omega(p, crit * (1 - 1e-6), 0))


def test_nan_bound_raises():
    with pytest.raises(ValueError):
        omega(ctx(), float("nan"))


def test_vector_form(rng):
    p = moments(rng.exponential(size=(30, 4)))
    out = omega(p, 0.7)
    assert out.shape == (4,)
    for j in range(4):
        assert out[j] == omega(p, 0.7, j)


@given(st.integers(2, 200), st.floats(0.0, 1e3), st.floats(1e-3, 1e3),
       st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_monotone_in_bound(n, mean, std, a, b):
    p = ScalingParams(n, [mean], [std])
    crit = critical_radius(n)
    lo, hi = sorted((a * crit * 1.1, b * crit * 1.1))
    assert omega(p, lo, 0) <= omega(p, hi, 0)


@given(st.integers(2, 200), st.floats(0.1, 100), st.floats(0.1, 100), st.floats(-0.99, 0.99))
def test_threshold_attains_the_bound(n, mean, std, frac):
    """At a positive threshold the augmented z-score equals the bound exactly."""
    p = ScalingParams(n, [mean], [std])
    c = frac * critical_radius(n)
    w = omega(p, c, 0)
    if w > 0:
        m, s = augmented_moments(p, w, 0)
        assert (w - m) / s == pytest.approx(c, abs=1e-7 * max(1, w / s))


def test_matches_bisection_oracle(rng):
    for _ in range(100):
        n = int(rng.integers(3, 80))
        p = moments(rng.lognormal(0, 1, (n, 1)) * rng.uniform(0.1, 10))
        c = float(rng.uniform(-1.1, 1.1) * critical_radius(n))
        closed, numeric = omega(p, c, 0), omega_bisection(p, c, 0)
        if math.isinf(closed) or math.isinf(numeric):
            assert closed == numeric
        else:
            assert closed == pytest.approx(numeric, rel=1e-8, abs=1e-8)


def test_near_singular_bound_is_large_and_finite():
    p = ctx(n=10, mean=2.0, std=1.0)
    c = critical_radius(10) * (1 - 1e-4)
    w = omega(p, c, 0)
    assert math.isfinite(w) and w > 100
    assert w == pytest.approx(omega_bisection(p, c, 0), rel=1e-8)
