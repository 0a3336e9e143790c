import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snippetcov.covariance import fit_marginals
from snippetcov.data import eval_grid
from snippetcov.exceptions import NoEligiblePairs, NoEligibleSubjects
from snippetcov.noise import (
    empirical_h0,
    estimate_noise_variance,
    estimate_noise_variance_hetero,
    h0_rule,
    pair_stats,
)
from snippetcov.simulate import SimConfig, sample_dataset

from .conftest import make_dataset, snippet_datasets


def two_point():
    return make_dataset([[0.1, 0.15]], [[1.0, 2.0]])


def test_two_point_pair_stats():
    st_ = pair_stats(two_point(), 0.1)
    assert st_.b_hat == 1.0
    assert st_.a0_hat == 2.5
    assert st_.a1_hat == 2.0
    assert st_.pair_count == 2
    assert estimate_noise_variance(two_point(), h0=0.1).sigma0_sq == 0.5


def test_no_pair_inside_h0():
    st_ = pair_stats(two_point(), 0.01)
    assert st_.b_hat == 0 and st_.pair_count == 0
    with pytest.raises(NoEligiblePairs):
        estimate_noise_variance(two_point(), h0=0.01)


def test_singletons_excluded():
    ds = make_dataset([[0.1, 0.15], [0.5], [0.7]], [[1.0, 2.0], [9.0], [4.0]])
    assert pair_stats(ds, 0.1) == pair_stats(two_point(), 0.1)
    with pytest.raises(NoEligibleSubjects):
        pair_stats(make_dataset([[0.1], [0.2]], [[1.0], [2.0]]), 0.1)


def test_h0_rule_example():
    h = h0_rule(200, 4.0, 0.25, 1.5)
    assert h == pytest.approx(0.29 * 0.25 * 1.5 * 3200 ** (-0.2), rel=1e-15)
    # frozen from direct evaluation; the rounded 0.02163 quoted for it is within 1e-3
    assert h == pytest.approx(0.021647077398846, rel=1e-12)
    assert h == pytest.approx(0.02163, rel=1e-3)
    assert h0_rule(200, 4.0, 0.25, 3.0) == pytest.approx(2 * h, rel=1e-15)


def test_fallback_returns_pair_gap_order_statistic():
    # 3 subjects, 2 points each: 6 ordered pairs, need ceil(0.6) = 1
    ds = make_dataset([[0.1, 0.3], [0.4, 0.5], [0.6, 0.9]], [[0, 0], [0, 0], [0, 0]])
    h = empirical_h0(ds, varsigma_norm=1e-9, delta_hat=0.3)
    gap = 0.5 - 0.4
    assert h == np.nextafter(gap, 1)
    assert pair_stats(ds, h).pair_count == 2  # both orderings of the smallest gap
    assert pair_stats(ds, gap).pair_count == 0


def test_fallback_not_triggered_for_wide_rule():
    ds = make_dataset([[0.1, 0.3], [0.4, 0.5]], [[0, 0], [0, 0]])
    assert empirical_h0(ds, varsigma_norm=100.0, delta_hat=0.2) == pytest.approx(h0_rule(2, 2.0, 0.2, 100.0))


def brute_force(ds, h0):
    a0 = a1 = b = 0.0
    n = 0
    for s in ds.subjects:
        m = s.m
        if m < 2:
            continue
        n += 1
        for j in range(m):
            for l in range(m):
                if j != l and abs(s.times[j] - s.times[l]) < h0:
                    a0 += s.values[j] ** 2 / (m * (m - 1))
                    a1 += s.values[j] * s.values[l] / (m * (m - 1))
                    b += 1 / (m * (m - 1))
    return a0 / n, a1 / n, b / n


@pytest.mark.filterwarnings("ignore")
@given(snippet_datasets(max_subjects=5, max_m=4, min_m=2), st.floats(1e-3, 1.0))
def test_brute_force_equivalence(ds, h0):
    st_ = pair_stats(ds, h0)
    a0, a1, b = brute_force(ds, h0)
    assert st_.a0_hat == pytest.approx(a0, rel=1e-12, abs=1e-12)
    assert st_.a1_hat == pytest.approx(a1, rel=1e-12, abs=1e-12)
    assert st_.b_hat == pytest.approx(b, rel=1e-12, abs=1e-15)
    assert 0 <= st_.b_hat <= 1
    assert (st_.b_hat == 0) == (st_.pair_count == 0)


@pytest.mark.filterwarnings("ignore")
@given(snippet_datasets(max_subjects=6, max_m=5, min_m=2), st.floats(1e-3, 1.0))
def test_nonnegativity(ds, h0):
    st_ = pair_stats(ds, h0)
    assert st_.a1_hat <= st_.a0_hat + 1e-9 * max(1.0, abs(st_.a0_hat))
    if st_.b_hat > 0:
        assert estimate_noise_variance(ds, h0=h0).sigma0_sq >= 0


@pytest.mark.filterwarnings("ignore")
@given(snippet_datasets(max_subjects=6, max_m=5, min_m=2), st.floats(1e-3, 0.5), st.floats(1e-3, 0.5))
def test_pair_count_monotone(ds, h1, h2):
    lo, hi = sorted((h1, h2))
    assert pair_stats(ds, lo).pair_count <= pair_stats(ds, hi).pair_count


@pytest.mark.filterwarnings("ignore")
@given(snippet_datasets(max_subjects=6, max_m=5, min_m=2), st.floats(0.01, 1.0), st.floats(-20, 20))
def test_scale_equivariance(ds, h0, c):
    a = pair_stats(ds, h0)
    b = pair_stats(ds.with_values(c * ds.values), h0)
    tol = dict(rel=1e-9, abs=1e-9 * max(1.0, c * c * a.a0_hat))
    assert b.a0_hat == pytest.approx(c * c * a.a0_hat, **tol)
    assert b.a1_hat == pytest.approx(c * c * a.a1_hat, **tol)
    assert b.b_hat == a.b_hat
    if a.b_hat > 0:
        s_a = estimate_noise_variance(ds, h0=h0).sigma0_sq
        s_b = estimate_noise_variance(ds.with_values(c * ds.values), h0=h0).sigma0_sq
        if (a.a0_hat - a.a1_hat) / a.b_hat > 1e-9 * max(1.0, a.a0_hat / a.b_hat):
            assert s_b == pytest.approx(c * c * s_a, rel=1e-7)


def test_ridge_flag_shrinks_estimate():
    ds = make_dataset([[0.1, 0.15], [0.3, 0.32, 0.5]], [[1.0, 2.0], [0.0, 1.5, 3.0]])
    plain = estimate_noise_variance(ds, h0=0.1)
    ridged = estimate_noise_variance(ds, h0=0.1, ridge=True)
    st_ = plain.stats
    assert ridged.sigma0_sq == pytest.approx((st_.a0_hat - st_.a1_hat) / (st_.b_hat + 0.1 / 25))
    assert ridged.sigma0_sq < plain.sigma0_sq


def test_hetero_two_point_and_undefined():
    ds = two_point()
    loc = estimate_noise_variance_hetero(ds, 0.1, [0.0, 0.12, 0.9])
    assert np.isnan(loc.values[0]) and np.isnan(loc.values[2])
    assert loc.values[1] == 0.5
    np.testing.assert_array_equal(loc.defined, [False, True, False])


@pytest.mark.filterwarnings("ignore")
@given(snippet_datasets(max_subjects=6, max_m=5, min_m=2), st.floats(0.01, 0.5))
def test_hetero_nonnegative(ds, h0):
    vals = estimate_noise_variance_hetero(ds, h0, eval_grid(0, 1, 11)).values
    assert np.all(vals[~np.isnan(vals)] >= 0)


@pytest.mark.montecarlo
def test_hetero_homoscedastic_band():
    for r in range(20):
        ds, _ = sample_dataset(SimConfig("I", n=200, design="dense", sigma0_sq=0.25, seed=500 + r))
        h0 = fit_marginals(ds, bandwidth_mean=0.1, bandwidth_var=0.1).noise.h0_used
        vals = estimate_noise_variance_hetero(ds, h0, eval_grid(0, 1)).values
        assert 0.1 <= np.nanmean(vals) <= 0.5


@pytest.mark.montecarlo
@pytest.mark.parametrize("setting", ["I", "II", "III"])
def test_error_shrinks_with_n(setting):
    better = 0
    for r in range(100):
        errs = []
        for n in (50, 200):
            ds, truth = sample_dataset(SimConfig(setting, n=n, seed=r))
            errs.append((fit_marginals(ds).noise.sigma0_sq - truth.sigma0_sq) ** 2)
        better += errs[1] < errs[0]
    assert better > 50
