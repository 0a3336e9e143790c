import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snippetcov import corrfit
from snippetcov.correlation import FourierBasis, Matern, PowerExponential, RationalQuadratic, make_family
from snippetcov.corrfit import (
    NM_ITER_PER_DIM,
    Objective,
    build_raw_pairs,
    dn_scores,
    fit_theta,
    objective,
    select_dn,
)
from snippetcov.covariance import fit_marginals
from snippetcov.exceptions import InvalidParameters, NoEligibleSubjects
from snippetcov.simulate import SimConfig, sample_dataset

from .conftest import make_dataset, random_dataset


def one():
    return lambda t: np.ones(np.shape(t))


def test_raw_pairs_example():
    ds = make_dataset([[0.1, 0.2]], [[2.0, 3.0]])
    p = build_raw_pairs(ds, lambda t: np.ones(np.shape(t)))
    np.testing.assert_array_equal(p.s, [0.1, 0.2])
    np.testing.assert_array_equal(p.t, [0.2, 0.1])
    np.testing.assert_array_equal(p.c, [2.0, 2.0])
    np.testing.assert_array_equal(p.weight, [0.5, 0.5])


def test_raw_pair_counts_and_singletons():
    ds = make_dataset([[0.1, 0.2], [0.5], [0.3, 0.4, 0.5], [0.7, 0.8]], [[0, 0], [1], [0, 0, 0], [0, 0]])
    p = build_raw_pairs(ds, one())
    np.testing.assert_array_equal(p.counts_per_subject(), [2, 6, 2])
    assert p.n_subjects == 3
    with pytest.raises(NoEligibleSubjects):
        build_raw_pairs(make_dataset([[0.1]], [[1.0]]), one())


def test_degenerate_scale_objective():
    ds = random_dataset(np.random.default_rng(3), n=10, m_range=(2, 4))
    p = build_raw_pairs(ds, one())
    expected = np.sum(p.weight * p.c**2)
    for theta in ([0.5, 0.1], [2.0, 3.0]):
        assert objective(theta, p, lambda t: np.zeros(np.shape(t)), "matern") == pytest.approx(expected)


def test_objective_matches_definition():
    ds = random_dataset(np.random.default_rng(4), n=6, m_range=(2, 4))
    mu = lambda t: np.sin(t)  # noqa: E731
    sx = lambda t: 1 + t  # noqa: E731
    theta = [0.8, 0.3]
    total = 0.0
    for s in ds.subjects:
        m = s.m
        r = s.values - mu(s.times)
        for j in range(m):
            for l in range(m):
                if j != l:
                    rho = np.exp(-((abs(s.times[j] - s.times[l]) / 0.3) ** 0.8))
                    total += (sx(s.times[j]) * sx(s.times[l]) * rho - r[j] * r[l]) ** 2 / (m * (m - 1))
    assert objective(theta, build_raw_pairs(ds, mu), sx, "powerexp") == pytest.approx(total, rel=1e-12)


def test_objective_positive_at_truth():
    cfg = SimConfig("I", n=1, design="dense", sigma0_sq=0.0, seed=5)
    ds, truth = sample_dataset(cfg)
    p = build_raw_pairs(ds, truth.mean)
    val = objective([0.5, 1.0], p, lambda t: np.sqrt(truth.variance(t)), "matern")
    assert val > 0


def test_objective_rejects_invalid_theta():
    ds = random_dataset(np.random.default_rng(3), n=5, m_range=(2, 3))
    with pytest.raises(InvalidParameters):
        objective([3.0, 1.0], build_raw_pairs(ds, one()), one(), "powerexp")


@pytest.mark.parametrize("family", [PowerExponential(), RationalQuadratic()])
def test_gradient_finite_differences(family):
    rng = np.random.default_rng(11)
    for _ in range(20):
        ds = random_dataset(rng, n=8, m_range=(2, 5))
        p = build_raw_pairs(ds, lambda t: np.zeros(np.shape(t)))
        theta = np.array([rng.uniform(0.3, 1.8), rng.uniform(0.05, 1.0)])
        obj = Objective(p, lambda t: 1 + 0.5 * t, family)
        grad = obj.gradient(theta)
        for k in range(2):
            h = 1e-6 * theta[k]
            e = np.zeros(2)
            e[k] = h
            fd = (obj(theta + e) - obj(theta - e)) / (2 * h)
            assert grad[k] == pytest.approx(fd, rel=1e-5, abs=1e-9)


@given(st.integers(0, 2**31))
@settings(max_examples=20)
def test_pair_reversal_invariance(seed):
    ds = random_dataset(np.random.default_rng(seed), n=6, m_range=(2, 4))
    p = build_raw_pairs(ds, lambda t: 0.5 * t)
    rev = corrfit.RawCovPairs(p.t, p.s, p.c, p.weight, p.subject, p.n_subjects)
    for fam, th in ((Matern(), [1.2, 0.3]), (FourierBasis(3), [0.2, 0.3, 0.5])):
        a = objective(th, p, lambda t: 1 + t, fam)
        b = objective(th, rev, lambda t: 1 + t, fam)
        assert a == pytest.approx(b, rel=1e-13)


@pytest.fixture(scope="module")
def sim_pairs():
    ds, truth = sample_dataset(SimConfig("I", n=60, seed=2))
    return build_raw_pairs(ds, truth.mean), (lambda t: np.sqrt(truth.variance(t)))


@pytest.mark.parametrize("name", ["matern", "powerexp", "rationalquad", "fourier:3"])
def test_fit_contract(sim_pairs, name):
    pairs, sx = sim_pairs
    fam = make_family(name)
    fit = fit_theta(pairs, sx, fam, delta_hat=0.25)
    assert fit.improves_on_starts
    assert fam.domain().contains(fit.theta_hat)
    assert fit.n_starts == (2 if name.startswith("fourier") else 8)
    again = fit_theta(pairs, sx, fam, delta_hat=0.25)
    np.testing.assert_array_equal(again.theta_hat, fit.theta_hat)
    assert again.objective_value == fit.objective_value


def test_user_start_added(sim_pairs):
    pairs, sx = sim_pairs
    fit = fit_theta(pairs, sx, Matern(), 0.25, start=[0.5, 1.0])
    assert fit.n_starts == 9 and fit.start_values.size == 9


def test_start_grid():
    pts = Matern().start_points(0.2)
    assert len(pts) == 8
    assert sorted({round(p[1], 12) for p in pts}) == [0.02, 0.1, 0.2, 0.4]
    assert len({p[0] for p in pts}) == 2
    heavy = FourierBasis(4).start_points(0.2)
    np.testing.assert_allclose(heavy[0], 0.25)
    assert heavy[1][0] == 0.9 and heavy[1].sum() == pytest.approx(1)


def test_monotone_iterations(sim_pairs):
    pairs, sx = sim_pairs
    trace = []
    fit_theta(pairs, sx, Matern(), 0.25, trace=trace)
    assert len(trace) == 8
    for run in trace:
        assert np.all(np.diff(run) <= 0)
        assert len(run) <= NM_ITER_PER_DIM * 2


def test_fourier_one_dimensional_forced(sim_pairs):
    pairs, sx = sim_pairs
    fit = fit_theta(pairs, sx, FourierBasis(1))
    np.testing.assert_array_equal(fit.theta_hat, [1.0])
    assert fit.converged


def test_fourier_excludes_vanishing_pairs():
    ds = make_dataset([[0.0, 0.3, 0.5], [0.2, 0.4]], [[1, 2, 3], [4, 5]])
    fit = fit_theta(build_raw_pairs(ds, one()), one(), FourierBasis(2))
    # every pair of the first subject touches t = 0 or t = 0.5
    assert fit.excluded_pair_count == 6
    assert fit.n_pairs == 2


@pytest.mark.parametrize("seed", range(5))
def test_brute_force_one_parameter(seed):
    rng = np.random.default_rng(seed)
    ds = make_dataset([np.sort(rng.uniform(0.05, 0.45, 2))], [rng.normal(size=2)])
    pairs = build_raw_pairs(ds, lambda t: np.zeros(np.shape(t)))
    assert len(pairs) <= 3
    fam = FourierBasis(2)
    sx = lambda t: 1 + t  # noqa: E731
    fit = fit_theta(pairs, sx, fam)
    grid = np.linspace(0, 1, 100001)
    obj = Objective(pairs, sx, fam)
    vals = np.array([obj(np.array([a, 1 - a])) for a in grid])
    best = grid[np.argmin(vals)]
    assert abs(fit.theta_hat[0] - best) <= 1e-5 or fit.objective_value <= vals.min()


def test_select_single_candidate():
    ds = random_dataset(np.random.default_rng(1), n=10, m_range=(2, 4))
    assert select_dn(ds, one(), one(), [1]) == 1


def test_select_tie_goes_to_smaller(monkeypatch):
    ds = random_dataset(np.random.default_rng(1), n=10, m_range=(2, 4))
    monkeypatch.setattr(corrfit, "dn_scores", lambda *a, **k: np.array([3.0, 1.0, 1.0]))
    assert select_dn(ds, one(), one(), [3, 2, 1], method="aic") == 2


def test_aic_formula():
    ds = random_dataset(np.random.default_rng(8), n=30, m_range=(2, 5))
    mu, sx = (lambda t: np.zeros(np.shape(t))), one()
    scores = dn_scores(ds, mu, sx, [1, 2], method="aic")
    pairs = build_raw_pairs(ds, mu)
    for k, d in enumerate([1, 2]):
        fit = fit_theta(pairs, sx, FourierBasis(d, (0, 1)))
        assert scores[k] == pytest.approx(len(pairs) * np.log(fit.objective_value / len(pairs)) + 2 * (d - 1))


def test_cv_scores_deterministic():
    ds = random_dataset(np.random.default_rng(8), n=30, m_range=(2, 5))
    a = dn_scores(ds, one(), one(), [1, 2, 3], seed=3)
    b = dn_scores(ds, one(), one(), [1, 2, 3], seed=3)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        dn_scores(ds, one(), one(), [1, 2], method="bic")


def _matern_fit(n, seed):
    ds, truth = sample_dataset(SimConfig("I", n=n, design="dense", snr=4.0, seed=seed))
    pairs = build_raw_pairs(ds, truth.mean)
    return fit_theta(pairs, lambda t: np.sqrt(truth.variance(t)), Matern(), 0.25)


@pytest.mark.montecarlo
@pytest.mark.xfail(
    reason="range and smoothness trade off over lags up to 0.25; the least-squares "
    "minimiser itself sits far from the truth in most replicates at n=200",
    strict=False,
)
def test_matern_parameter_recovery():
    close = sum(np.linalg.norm(_matern_fit(200, 100 + r).theta_hat - [0.5, 1.0]) <= 0.15 for r in range(50))
    assert close >= 40


@pytest.mark.montecarlo
def test_matern_fit_improves_with_n():
    lags = np.linspace(0, 0.25, 50)

    def err(n, r):
        return np.max(np.abs(Matern().lag(_matern_fit(n, 100 + r).theta_hat, lags) - np.exp(-lags)))

    small = np.mean([err(50, r) for r in range(8)])
    large = np.mean([err(800, r) for r in range(8)])
    assert large < small


@pytest.mark.montecarlo
def test_cv_picks_several_terms_for_setting_II():
    picks = []
    for r in range(50):
        ds, _ = sample_dataset(SimConfig("II", n=200, seed=700 + r))
        marg = fit_marginals(ds)
        picks.append(select_dn(ds, marg.mean, marg.variance.sigma_x, [1, 2, 3, 4, 5]))
    assert sum(d >= 2 for d in picks) > 25
