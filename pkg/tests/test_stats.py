"""Streaming moment accumulators and the small inference helpers."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbmlab.stats import (
    McSummary,
    bernoulli_test,
    clopper_pearson,
    empirical_laplace,
    ks_two_sample,
    loglog_regression,
    mc_mean_ci,
    merge_summaries,
    welford_summary,
)

finite_floats = st.floats(min_value=-1e6, max_value=1e6,
                          allow_nan=False, allow_infinity=False)


@given(st.lists(finite_floats, min_size=1, max_size=200))
@settings(max_examples=200, deadline=None)
def test_from_samples_matches_welford(xs):
    a = McSummary.from_samples(np.array(xs))
    b = welford_summary(xs)
    assert a.count == b.count == len(xs)
    assert a.mean == pytest.approx(b.mean, rel=1e-9, abs=1e-9)
    assert a.m2 == pytest.approx(b.m2, rel=1e-9, abs=1e-6)


@given(st.lists(finite_floats, min_size=1, max_size=120),
       st.lists(finite_floats, min_size=1, max_size=120))
@settings(max_examples=200, deadline=None)
def test_merge_equals_concatenation(xs, ys):
    merged = merge_summaries([McSummary.from_samples(np.array(xs)),
                              McSummary.from_samples(np.array(ys))])
    whole = McSummary.from_samples(np.array(xs + ys))
    assert merged.count == whole.count
    assert merged.mean == pytest.approx(whole.mean, rel=1e-9, abs=1e-9)
    assert merged.m2 == pytest.approx(whole.m2, rel=1e-7, abs=1e-5)


@given(st.lists(finite_floats, min_size=2, max_size=100))
@settings(max_examples=100, deadline=None)
def test_variance_matches_numpy(xs):
    s = McSummary.from_samples(np.array(xs))
    assert s.variance == pytest.approx(np.var(xs, ddof=1), rel=1e-8, abs=1e-7)
    assert s.se == pytest.approx(np.sqrt(s.variance / len(xs)), rel=1e-12)


def test_push_incremental():
    s = McSummary()
    data = [1.0, -2.5, 3.25, 0.0, 7.5]
    for x in data:
        s.push(x)
    np.testing.assert_allclose(s.mean, np.mean(data))
    np.testing.assert_allclose(s.variance, np.var(data, ddof=1))


def test_merge_with_empty_summary():
    s = McSummary.from_samples(np.array([1.0, 2.0, 3.0]))
    merged = merge_summaries([McSummary(), s, McSummary()])
    assert merged.count == 3
    assert merged.mean == pytest.approx(2.0)


def test_single_sample_variance_nan_se():
    s = McSummary.from_samples(np.array([4.2]))
    assert s.count == 1
    assert not np.isfinite(s.variance) or s.variance == 0.0 or np.isnan(s.variance)


def test_mc_mean_ci_levels():
    rs = np.random.default_rng(0)
    xs = rs.normal(3.0, 1.0, size=4000)
    mean95, half95 = mc_mean_ci(McSummary.from_samples(xs), level=0.95)
    mean3, half3 = mc_mean_ci(McSummary.from_samples(xs), level="3-sigma")
    assert mean95 == mean3
    assert mean95 - half95 < 3.0 < mean95 + half95
    # 3-sigma band is wider than the 1.96-sigma band by construction
    assert half3 == pytest.approx(half95 * 3.0 / 1.959963984540054, rel=1e-9)
    with pytest.raises(ValueError):
        mc_mean_ci(McSummary.from_samples(xs), level=0.5)
    with pytest.raises(ValueError):
        mc_mean_ci(np.array([1.0]), level=0.95)


def test_bernoulli_test_centering():
    # 520 successes out of 1000 at p0 = 0.5: z = (0.52 - 0.5)/sqrt(0.25/1000)
    z = bernoulli_test(520, 1000, 0.5)
    assert z == pytest.approx(0.02 / np.sqrt(0.25 / 1000.0), rel=1e-9)
    assert bernoulli_test(500, 1000, 0.5) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        bernoulli_test(5, 0, 0.5)
    with pytest.raises(ValueError):
        bernoulli_test(5, 4, 0.5)
    with pytest.raises(ValueError):
        bernoulli_test(3, 4, 1.0)


def test_clopper_pearson_edges():
    lo, hi = clopper_pearson(0, 100)
    assert lo == 0.0 and 0.0 < hi < 0.06
    lo, hi = clopper_pearson(100, 100)
    assert hi == 1.0 and 0.94 < lo < 1.0
    lo, hi = clopper_pearson(50, 100)
    assert lo < 0.5 < hi


def test_empirical_laplace_exact_on_constants():
    xs = np.full(10, 2.0)
    vals, ses = empirical_laplace(xs, (0.5, 1.0))
    np.testing.assert_allclose(vals, [np.exp(-1.0), np.exp(-2.0)])
    np.testing.assert_allclose(ses, 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        empirical_laplace(np.array([-1.0, 2.0]), (0.5,))


def test_loglog_regression_recovers_power_law():
    x = np.geomspace(0.01, 1.0, 25)
    y = 3.7 * x**2.5
    slope, intercept, stderr = loglog_regression(np.column_stack([x, y]))
    assert slope == pytest.approx(2.5, abs=1e-10)
    assert intercept == pytest.approx(np.log(3.7), abs=1e-10)
    assert stderr == pytest.approx(0.0, abs=1e-8)


def test_loglog_regression_validation():
    with pytest.raises(ValueError):
        loglog_regression([(1.0, 1.0), (2.0, 2.0)])
    with pytest.raises(ValueError):
        loglog_regression([(1.0, 1.0), (2.0, 2.0), (-3.0, 3.0)])
    with pytest.raises(ValueError):
        loglog_regression([(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)])


def test_ks_two_sample_identical_and_disjoint():
    rs = np.random.default_rng(1)
    a = rs.normal(size=500)
    d_same, p_same = ks_two_sample(a, a.copy())
    assert d_same == pytest.approx(0.0, abs=1e-12)
    assert p_same > 0.99
    d_far, p_far = ks_two_sample(a, a + 100.0)
    assert d_far == pytest.approx(1.0)
    assert p_far < 1e-6
