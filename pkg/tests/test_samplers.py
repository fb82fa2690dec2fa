import numpy as np
import pytest

from difpath.denoiser import AnalyticGMMDenoiser, ConvDenoiser
from difpath.diffusion import posterior_mean
from difpath.errors import ContractError, ParameterError, SizeError
from difpath.numerics import RngStream
from difpath.samplers import (SamplerConfig, cfg_combine, ddim_sigma, ddim_step, ddpm_step,
                              eps_scale_step, sample)
from difpath.schedule import linear_schedule


class Counting:
    """Wraps a denoiser and counts predict calls."""

    def __init__(self, d):
        self.d, self.calls = d, 0
        self.channels = getattr(d, "channels", 1)
        self.size_agnostic = True

    def predict(self, x, t, c=None):
        self.calls += 1
        return self.d.predict(x, t, c)


@pytest.fixture(scope="module")
def net():
    return ConvDenoiser.create(3, 2, RngStream(0), width=8, n_layers=3, temb_dim=8,
                               zero_out=False)


def test_config_validation():
    with pytest.raises(ParameterError):
        SamplerConfig("bogus")
    with pytest.raises(ParameterError):
        SamplerConfig("ddim", eta=1.5)
    with pytest.raises(ParameterError):
        SamplerConfig(eps_scale_k=0.1)
    with pytest.raises(SizeError):
        SamplerConfig(target_size=4)
    assert SamplerConfig(target_size=16).target_size == (16, 16)


def test_eps_lambda():
    assert SamplerConfig().eps_lambda(10) == 1.014
    assert SamplerConfig(eps_scale_k=1e-5, eps_scale_b=1.0).eps_lambda(100) == pytest.approx(1.001)


def test_cfg_combine():
    a, b = np.array([1.0, 2.0]), np.array([0.5, -1.0])
    assert np.array_equal(cfg_combine(a, b, 0.0), a)
    assert np.allclose(cfg_combine(a, b, 2.0), 3 * a - 2 * b)
    with pytest.raises(ContractError):
        cfg_combine(a, b[:1], 1.0)


def test_ddpm_last_step_is_mean(sched):
    x, e = np.ones(4), np.full(4, 0.2)
    assert np.array_equal(ddpm_step(x, e, 1, sched, z=np.ones(4)), posterior_mean(x, e, 1, sched))


def test_ddpm_variance_choice(sched):
    x, e, z = np.zeros(2), np.zeros(2), np.ones(2)
    a = ddpm_step(x, e, 500, sched, z=z)
    b = ddpm_step(x, e, 500, sched, reverse_variance="beta", z=z)
    assert a[0] == pytest.approx(np.sqrt(sched.posterior_var[500]))
    assert b[0] == pytest.approx(np.sqrt(sched.beta[500]))


@pytest.mark.parametrize("t", [2, 10, 500, 999, 1000])
def test_ddim_eta1_consecutive_equals_posterior(sched, t):
    g = np.random.default_rng(t)
    for _ in range(20):
        x, e = g.standard_normal(5), g.standard_normal(5)
        mean_ddim = ddim_step(x, e, t, t - 1, sched, eta=1.0, z=np.zeros(5))
        assert np.allclose(mean_ddim, posterior_mean(x, e, t, sched), rtol=0, atol=1e-10)
        assert ddim_sigma(sched, t, t - 1, 1.0) == pytest.approx(
            np.sqrt(sched.posterior_var[t]), rel=1e-12)


def test_ddim_final_step_returns_x0(sched):
    x, e = np.array([0.3, -0.2]), np.array([0.1, 0.4])
    ab = sched.alpha_bar[20]
    want = (x - np.sqrt(1 - ab) * e) / np.sqrt(ab)
    assert np.allclose(ddim_step(x, e, 20, 0, sched, eta=1.0), want)


def test_ddim_clip_x0(sched):
    x, e = np.array([5.0]), np.array([0.0])
    assert ddim_step(x, e, 10, 0, sched, clip_x0=True)[0] == 1.0


def test_ddim_bad_arguments(sched):
    with pytest.raises(ParameterError):
        ddim_step(np.zeros(1), np.zeros(1), 10, 10, sched)
    with pytest.raises(ContractError):
        ddim_step(np.zeros(1), np.zeros(2), 10, 5, sched)


def test_ddim_sigma_never_exceeds_budget():
    # sigma^2 = (1 - abar_prev) beta_t / (1 - abar_t) <= 1 - abar_prev because beta_t <= 1 - abar_t
    s = linear_schedule(4, 0.3, 0.9)
    events = []
    for t in range(1, 5):
        for tp in range(t):
            assert ddim_sigma(s, t, tp, 1.0) ** 2 <= 1 - s.alpha_bar[tp] + 1e-15
            ddim_step(np.zeros(1), np.zeros(1), t, tp, s, eta=1.0, z=np.zeros(1), events=events)
    assert events == []


def test_eps_scale_lambda_one_is_ddpm(sched):
    x, e, z = np.ones(3), np.full(3, 0.3), np.full(3, -0.5)
    assert np.array_equal(eps_scale_step(x, e, 400, sched, 1.0, z=z), ddpm_step(x, e, 400, sched, z=z))
    with pytest.raises(ParameterError):
        eps_scale_step(x, e, 400, sched, 0.0)


def test_sample_zero(net, sched):
    out = sample(net, sched, SamplerConfig("ddim", 5, target_size=8), 0, 0, RngStream(0))
    assert out.shape == (0, 8, 8, 3)


def test_chunking_does_not_change_samples(net, sched):
    cfg = SamplerConfig("ddim", 5, eta=1.0, target_size=8)
    a = sample(net, sched, cfg, 1, 5, RngStream(3), batch_size=2)
    b = sample(net, sched, cfg, 1, 5, RngStream(3), batch_size=64)
    assert np.array_equal(a, b)


def test_prefix_stability(net, sched):
    cfg = SamplerConfig("ddim", 4, eta=0.5, target_size=8)
    a = sample(net, sched, cfg, 0, 3, RngStream(4))
    b = sample(net, sched, cfg, 0, 6, RngStream(4))
    assert np.array_equal(a, b[:3])


def test_call_counts_and_trace(net, sched):
    for kind, n_steps, w, want in [("ddim", 7, 0.0, 7), ("ddim", 7, 1.5, 14),
                                   ("ddpm", 1000, 0.0, 1000)]:
        d = Counting(net)
        trace = []
        cfg = SamplerConfig(kind, n_steps, guidance_w=w, target_size=8)
        sample(d, sched, cfg, 1, 1, RngStream(0), trace=trace)
        assert d.calls == want
        assert len(trace) == (n_steps if kind == "ddim" else 1000)
    assert trace[0] == ("ddpm_step", 1000, 999) and trace[-1] == ("ddpm_step", 1, 0)


def test_ddim_trace_ends_at_zero(net, sched):
    trace = []
    sample(net, sched, SamplerConfig("ddim", 50, target_size=8), 0, 1, RngStream(0), trace=trace)
    assert trace[0] == ("ddim_step", 1000, 980) and trace[-1] == ("ddim_step", 20, 0)


def test_unconditional_guidance_is_single_call(net, sched):
    d = Counting(net)
    sample(d, sched, SamplerConfig("ddim", 3, guidance_w=2.0, target_size=8), None, 1, RngStream(0))
    assert d.calls == 3


def test_analytic_sampling_flat_shapes(sched):
    g = AnalyticGMMDenoiser([1.0], [[0.0, 0.0]], [0.5], sched)
    out = sample(g, sched, SamplerConfig("ddim", 10, target_size=8), None, 4, RngStream(1),
                 sample_shape=(2,))
    assert out.shape == (4, 2) and np.all(np.isfinite(out))


def test_clipped_ddim_step_rederives_eps(sched):
    x = np.array([[0.5, -0.1, 3.0]])
    eps = np.array([[-40.0, 0.1, 0.3]])          # first entry drives x0 far past +1
    t, tp = 500, 400
    out = ddim_step(x, eps, t, tp, sched, clip_x0=True)
    ab, abp = sched.alpha_bar[t], sched.alpha_bar[tp]
    x0 = (x - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
    x0c = np.clip(x0, -1, 1)
    eps_c = np.where(x0c != x0, (x - np.sqrt(ab) * x0c) / np.sqrt(1 - ab), eps)
    assert np.allclose(out, np.sqrt(abp) * x0c + np.sqrt(1 - abp) * eps_c, rtol=0, atol=1e-12)
    # entries that were not clipped are untouched
    plain = ddim_step(x, eps, t, tp, sched, clip_x0=False)
    assert out[0, 1] == plain[0, 1]


def test_clipping_keeps_overshooting_predictor_bounded(sched):
    class Overshoot:
        channels, size_agnostic = 1, True

        def predict(self, x, t, c=None):
            return 2.0 * x

    cfg = SamplerConfig("ddim", 100, clip_x0=True, target_size=8)
    x = sample(Overshoot(), sched, cfg, None, 4, RngStream(1))
    assert np.all(np.isfinite(x)) and np.abs(x).max() <= 1.0
