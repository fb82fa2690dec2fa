import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from difpath.denoiser import AnalyticGMMDenoiser
from difpath.errors import ContractError, InsufficientDataError, ParameterError
from difpath.metrics import (GaussianStats, KIDConfig, distribution_checks, fid, fid_from_features,
                             fit_stats, kid, mmd2_unbiased, sliced_wasserstein, wasserstein_1d)
from difpath.numerics import RngStream


def brute_mmd2(x, y, gamma, coef=1.0, degree=3):
    k = lambda a, b: (gamma * (a @ b) + coef) ** degree
    n, m = len(x), len(y)
    sxx = sum(k(x[i], x[j]) for i in range(n) for j in range(n) if i != j)
    syy = sum(k(y[i], y[j]) for i in range(m) for j in range(m) if i != j)
    sxy = sum(k(x[i], y[j]) for i in range(n) for j in range(m))
    return sxx / (n * (n - 1)) + syy / (m * (m - 1)) - 2 * sxy / (n * m)


def test_fit_stats_unbiased():
    f = np.random.default_rng(0).standard_normal((50, 3))
    st_ = fit_stats(f)
    assert np.allclose(st_.sigma, np.cov(f, rowvar=False))
    with pytest.raises(InsufficientDataError):
        fit_stats(f[:1])


def test_fid_self_zero():
    f = np.random.default_rng(1).standard_normal((200, 8))
    s = fit_stats(f)
    assert fid(s, s) == pytest.approx(0.0, abs=1e-9)


def test_fid_diagonal_closed_form():
    a = GaussianStats(np.zeros(2), np.diag([1.0, 4.0]), 10)
    b = GaussianStats(np.array([1.0, 0.0]), np.diag([4.0, 9.0]), 10)
    assert fid(a, b) == pytest.approx(1 + (1 - 2) ** 2 + (2 - 3) ** 2, abs=1e-10)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 4), st.floats(0.01, 4))
@settings(max_examples=50, deadline=None)
def test_fid_1d(m1, m2, s1, s2):
    a = GaussianStats(np.array([m1]), np.array([[s1 ** 2]]), 2)
    b = GaussianStats(np.array([m2]), np.array([[s2 ** 2]]), 2)
    assert fid(a, b) == pytest.approx((m1 - m2) ** 2 + (s1 - s2) ** 2, abs=1e-8)


def test_fid_singular_covariances():
    a = GaussianStats(np.zeros(3), np.diag([1.0, 0.0, 0.0]), 5)
    b = GaussianStats(np.zeros(3), np.diag([0.0, 1.0, 0.0]), 5)
    assert fid(a, b) == pytest.approx(2.0, abs=1e-6)


def test_fid_dimension_mismatch():
    with pytest.raises(ContractError):
        fid(GaussianStats(np.zeros(2), np.eye(2), 2), GaussianStats(np.zeros(3), np.eye(3), 2))


def test_mmd_matches_brute_force():
    g = np.random.default_rng(2)
    x, y = g.standard_normal((30, 4)), g.standard_normal((20, 4)) + 0.3
    assert mmd2_unbiased(x, y, 0.25) == pytest.approx(brute_mmd2(x, y, 0.25), rel=1e-10, abs=1e-12)


def test_kid_same_distribution_near_zero():
    g = np.random.default_rng(3)
    x, y = g.standard_normal((500, 16)), g.standard_normal((500, 16))
    m, s = kid(x, y, rng=RngStream(0))
    assert abs(m) < 3 * s


def test_kid_detects_shift():
    g = np.random.default_rng(4)
    m, s = kid(g.standard_normal((300, 8)), g.standard_normal((300, 8)) + 1.0, rng=RngStream(0))
    assert m > 3 * s


def test_kid_errors():
    with pytest.raises(ParameterError):
        kid(np.zeros((10, 2)), np.zeros((10, 2)), KIDConfig(subset_size=20))
    with pytest.raises(ContractError):
        kid(np.zeros((10, 2)), np.zeros((10, 3)), KIDConfig(subset_size=5))
    with pytest.raises(ParameterError):
        KIDConfig(subset_size=1)


def test_w1_examples():
    assert wasserstein_1d([0, 1], [0, 1]) == 0
    assert wasserstein_1d([0.0], [3.0]) == 3.0
    assert wasserstein_1d([0, 1, 2, 3], [1, 2]) == pytest.approx(0.5)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(-3, 3))
@settings(max_examples=50, deadline=None)
def test_w1_shift(xs, c):
    a = np.array(xs)
    assert wasserstein_1d(a, a + c) == pytest.approx(abs(c), abs=1e-9)


def test_sliced_w_zero_and_positive():
    x = np.random.default_rng(5).standard_normal((100, 3))
    assert sliced_wasserstein(x, x) == 0.0
    assert sliced_wasserstein(x, x + 1.0) > 0.5


def test_distribution_checks_on_direct_samples():
    g = AnalyticGMMDenoiser([0.3, 0.7], [[-2.0, 0.0], [2.0, 0.0]], [0.1, 0.1])
    x, _ = g.sample_data(2000, RngStream(6))
    r = distribution_checks(x, g, RngStream(7))
    assert np.allclose(r.weights, [0.3, 0.7], atol=0.03)
    assert np.all(r.mean_errors < 0.05)
    assert r.sliced_w < 2.0 * r.baseline_sliced_w
    with pytest.raises(InsufficientDataError):
        distribution_checks(x[:10], g)
