import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snippetcov.data import estimate_span
from snippetcov.exceptions import FactorizationFailure
from snippetcov.simulate import (
    SimConfig,
    _cholesky,
    sample_dataset,
    true_cov,
    true_mean,
    true_variance,
    write_dataset_csv,
)


def test_setting_I_variance_at_point_one():
    assert true_variance("I", 0.1) == pytest.approx(1 + math.sqrt(0.1), rel=1e-15)
    assert true_cov("I", 0.1, 0.1) == pytest.approx(1.316227766, abs=1e-9)


def test_setting_I_is_matern_half():
    s, t = 0.2, 0.7
    assert true_cov("I", s, t) == pytest.approx(math.sqrt(true_variance("I", s) * true_variance("I", t)) * math.exp(-0.5))


def test_setting_II_diagonal_at_quarter():
    # odd-k finite sum, 25 terms
    assert true_cov("II", 0.25, 0.25) == pytest.approx(4.894807530895116, rel=1e-12)


def test_setting_III_formula():
    s, t = 0.13, 0.61
    j = np.arange(1, 6)
    c = np.exp(-np.abs(j[:, None] - j[None, :])) / 5
    ps, pt = np.sqrt(2) * np.sin(2 * j * np.pi * s), np.sqrt(2) * np.sin(2 * j * np.pi * t)
    assert true_cov("III", s, t) == pytest.approx(ps @ c @ pt, rel=1e-13)


@given(st.sampled_from(["I", "II", "III"]), st.floats(0, 1), st.floats(0, 1))
def test_symmetry(setting, s, t):
    assert true_cov(setting, s, t) == pytest.approx(true_cov(setting, t, s), rel=1e-12, abs=1e-14)


@settings(max_examples=30)
@given(st.sampled_from(["II", "III"]), st.integers(0, 2**31))
def test_gram_psd(setting, seed):
    t = np.random.default_rng(seed).uniform(0, 1, 20)
    g = true_cov(setting, t[:, None], t[None, :])
    assert np.linalg.eigvalsh(g).min() >= -1e-10 * np.trace(g)


def test_means():
    t = np.array([0.0, 0.25, 0.5, 1.0])
    np.testing.assert_allclose(true_mean("mu1", t), 2 * t**2 * np.cos(2 * np.pi * t), atol=1e-15)
    np.testing.assert_allclose(true_mean("mu2", t), np.exp(t) / 2)
    np.testing.assert_array_equal(true_mean("zero", t), 0)


def test_snr_noise_level():
    # 201-point trapezoid of the setting I variance, halved
    assert SimConfig("I", snr=2.0).noise_variance() == pytest.approx(0.8229439563888827, rel=1e-13)
    assert SimConfig("I", sigma0_sq=0.25).noise_variance() == 0.25


def test_config_defaults_and_validation():
    assert SimConfig().m == 4 and SimConfig(design="dense").m == 26
    assert SimConfig(sigma0_sq=0.1).snr is None
    for bad in (dict(n=0), dict(m=1), dict(delta=0.0), dict(delta=1.5), dict(design="grid"), dict(snr=-1.0)):
        with pytest.raises(ValueError):
            SimConfig(**bad)
    with pytest.raises(ValueError):
        SimConfig(snr=None)


@pytest.mark.parametrize("design", ["sparse", "dense"])
def test_snippet_constraint(design):
    ds, _ = sample_dataset(SimConfig("III", n=300, design=design, seed=4))
    for s in ds.subjects:
        assert s.times[-1] - s.times[0] <= 0.25 + 1e-12
        assert 0.0 <= s.times[0] and s.times[-1] <= 1.0
        if design == "sparse":
            assert 2 <= s.m <= 6
        else:
            assert s.m == 26


def test_sparse_m_distribution():
    ds, _ = sample_dataset(SimConfig("I", n=3000, seed=1))
    counts = np.bincount(ds.m, minlength=7)[2:]
    assert counts.size == 5 and counts.min() > 500
    assert np.mean(ds.m) == pytest.approx(4, abs=0.1)


def test_dense_span_exact():
    ds, _ = sample_dataset(SimConfig("I", n=50, design="dense", seed=3))
    assert estimate_span(ds).delta_hat == pytest.approx(0.25, abs=1e-15)


def test_seed_determinism_and_nesting():
    a, _ = sample_dataset(SimConfig("II", n=30, seed=8))
    b, _ = sample_dataset(SimConfig("II", n=30, seed=8))
    c, _ = sample_dataset(SimConfig("II", n=60, seed=8))
    d, _ = sample_dataset(SimConfig("II", n=30, seed=9))
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.values, c.subset(range(30)).values)
    assert not np.array_equal(a.times, d.times)


def test_noise_free_matches_latent_draw():
    noisy, truth = sample_dataset(SimConfig("I", n=20, sigma0_sq=0.0, seed=5))
    again, _ = sample_dataset(SimConfig("I", n=20, sigma0_sq=1.0, seed=5))
    # the latent draw precedes the noise draw in each subject's stream
    resid = again.values - noisy.values
    assert np.std(resid) == pytest.approx(1.0, abs=0.35)
    assert truth.sigma0_sq == 0.0


@pytest.mark.montecarlo
@pytest.mark.parametrize("setting", ["I", "II", "III"])
def test_sample_covariance_exact(setting):
    # delta = 1 pins every dense design to the same five times
    cfg = SimConfig(setting, n=10_000, m=5, design="dense", delta=1.0, sigma0_sq=0.0, mean="zero", seed=6)
    ds, truth = sample_dataset(cfg)
    x = ds.values.reshape(cfg.n, 5)
    t = ds.subjects[0].times
    c = truth.cov(t[:, None], t[None, :])
    emp = np.cov(x, rowvar=False)
    se = np.sqrt((c**2 + np.outer(np.diag(c), np.diag(c))) / (cfg.n - 1))
    # rows at t = 0, 1/2, 1 vanish for II and III; the factorization jitter leaves ~1e-8 there
    assert np.all(np.abs(emp - c) <= 4 * se + 1e-7)


def test_cholesky_jitter_and_failure():
    v = np.array([1.0, 1.0])
    singular = np.outer(v, v)
    np.linalg.cholesky(singular + 1e-12 * np.eye(2))
    assert _cholesky(singular).shape == (2, 2)
    with pytest.raises(FactorizationFailure):
        _cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_truth_on_grid():
    _, truth = sample_dataset(SimConfig("III", n=2, seed=0))
    g, mu, var, cov = truth.on_grid(11)
    assert g.size == 11 and cov.shape == (11, 11)
    np.testing.assert_allclose(np.diag(cov), var)


def test_csv_round_trip(tmp_path):
    from snippetcov.bench import ingest_csv

    ds, _ = sample_dataset(SimConfig("I", n=10, seed=2))
    path = tmp_path / "d.csv"
    write_dataset_csv(ds, path)
    back = ingest_csv(path, domain_lo=0.0, domain_hi=1.0).dataset
    np.testing.assert_array_equal(back.times, ds.times)
    np.testing.assert_array_equal(back.values, ds.values)
    assert [s.id for s in back.subjects] == [s.id for s in ds.subjects]
