import numpy as np
import pytest

from difpath.diffusion import forward_marginal, forward_step, posterior_mean, simple_loss
from difpath.errors import ContractError, ParameterError
from difpath.numerics import RngStream


def test_t_zero_is_identity(sched):
    x0 = np.random.default_rng(0).standard_normal((3, 4))
    assert np.array_equal(forward_marginal(x0, 0, sched, RngStream(0)).x_t, x0)


def test_t_T_is_nearly_noise(sched):
    x0 = np.full((20000,), 0.9)
    x = forward_marginal(x0, 1000, sched, RngStream(1)).x_t
    assert abs(x.mean()) < 0.02 and abs(x.var() - 1) < 0.03


def test_marginal_uses_returned_noise(sched):
    x0 = np.random.default_rng(2).standard_normal((2, 3))
    s = forward_marginal(x0, np.array([10, 700]), sched, RngStream(3))
    ab = sched.alpha_bar[[10, 700]][:, None]
    assert np.allclose(s.x_t, np.sqrt(ab) * x0 + np.sqrt(1 - ab) * s.eps, atol=1e-15)


def test_marginal_rejects_nonfinite(sched):
    with pytest.raises(ParameterError):
        forward_marginal(np.array([np.nan]), 5, sched, RngStream(0))


def test_composed_steps_match_marginal(sched):
    n = 40000
    x = np.full(n, 0.7)
    rng = RngStream(4)
    for t in range(1, 51):
        x = forward_step(x, t, sched, rng)
    ab = sched.alpha_bar[50]
    assert x.mean() == pytest.approx(np.sqrt(ab) * 0.7, abs=4 * np.sqrt((1 - ab) / n))
    assert x.var() == pytest.approx(1 - ab, rel=0.05)


def test_posterior_mean_with_true_noise(sched):
    # with the true eps, the ancestral mean equals the q(x_{t-1} | x_t, x_0) mean
    g = np.random.default_rng(5)
    x0 = g.standard_normal(6)
    eps = g.standard_normal(6)
    t = 300
    ab, abp, b = sched.alpha_bar[t], sched.alpha_bar[t - 1], sched.beta[t]
    xt = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
    want = (np.sqrt(abp) * b / (1 - ab)) * x0 + (np.sqrt(1 - b) * (1 - abp) / (1 - ab)) * xt
    assert np.allclose(posterior_mean(xt, eps, t, sched), want, atol=1e-12)


def test_posterior_mean_shape_mismatch(sched):
    with pytest.raises(ContractError):
        posterior_mean(np.zeros(3), np.zeros(4), 5, sched)


class ZeroNet:
    def forward(self, x, t, c):
        return np.zeros_like(x), None

    def backward(self, tape, d):
        return {}


def test_simple_loss_of_zero_predictor_is_noise_power(sched):
    loss, grads = simple_loss(ZeroNet(), np.zeros((64, 8, 8, 3)), None, sched, RngStream(6))
    # mean of 12288 chi-square(1) draws: std about 0.013
    assert loss == pytest.approx(1.0, abs=0.06)
    assert grads == {}
