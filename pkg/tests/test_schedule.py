import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from difpath.errors import ParameterError
from difpath.schedule import NoiseSchedule, cosine_schedule, linear_schedule, subsequence


def test_linear_endpoints(sched):
    assert sched.T == 1000
    assert sched.beta[0] == 0 and sched.alpha_bar[0] == 1
    assert sched.beta[1] == pytest.approx(1e-4)
    assert sched.beta[1000] == pytest.approx(0.02)


def test_alpha_bar_is_cumprod(sched):
    assert np.allclose(sched.alpha_bar, np.cumprod(1 - sched.beta), rtol=0, atol=1e-15)
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert sched.alpha_bar[-1] < 1e-4


def test_posterior_variance_formula(sched):
    t = 500
    want = (1 - sched.alpha_bar[t - 1]) / (1 - sched.alpha_bar[t]) * sched.beta[t]
    assert sched.posterior_var[t] == pytest.approx(want, rel=1e-14)
    assert sched.posterior_var[1] == 0.0


def test_arrays_read_only(sched):
    with pytest.raises(ValueError):
        sched.beta[3] = 0.5


def test_bad_schedules():
    with pytest.raises(ParameterError):
        linear_schedule(0)
    with pytest.raises(ParameterError):
        linear_schedule(10, 0.5, 0.1)
    with pytest.raises(ParameterError):
        NoiseSchedule(np.array([0.0, 1.5]))


def test_cosine_valid():
    s = cosine_schedule(100)
    assert s.T == 100 and np.all(s.beta[1:] > 0) and np.all(s.beta[1:] < 1)


def test_round_trip_dict(sched):
    s2 = NoiseSchedule.from_dict(sched.to_dict())
    assert np.array_equal(s2.beta, sched.beta)


def test_subsequence_examples(sched):
    assert subsequence(sched, 50).tolist() == list(range(20, 1001, 20))
    assert subsequence(sched, 1000).tolist() == list(range(1, 1001))
    assert subsequence(linear_schedule(10), 3).tolist() == [3, 7, 10]
    # half-way cases round up
    assert subsequence(linear_schedule(10), 4).tolist() == [3, 5, 8, 10]


@given(st.integers(1, 300), st.data())
@settings(max_examples=50, deadline=None)
def test_subsequence_properties(T, data):
    n = data.draw(st.integers(1, T))
    seq = subsequence(linear_schedule(T), n)
    assert len(seq) == n and seq[-1] == T and seq[0] >= 1
    assert np.all(np.diff(seq) > 0)


def test_subsequence_range(sched):
    with pytest.raises(ParameterError):
        subsequence(sched, 0)
    with pytest.raises(ParameterError):
        subsequence(sched, 1001)


def test_check_t(sched):
    with pytest.raises(ParameterError):
        sched.check_t(0)
    assert sched.check_t(0, allow_zero=True) == 0
    with pytest.raises(ParameterError):
        sched.check_t(1001)
