import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from difpath.errors import NotPSDError, ParameterError, SymmetryError
from difpath.numerics import RngStream, gaussian, gaussian_words, psd_sqrt, sym_eig


def test_same_seed_same_words():
    assert np.array_equal(RngStream(5).raw(10), RngStream(5).raw(10))


def test_streams_differ():
    assert not np.array_equal(RngStream(5, 0).raw(8), RngStream(5, 1).raw(8))
    assert not np.array_equal(RngStream(5).child(0).raw(8), RngStream(5).child(1).raw(8))


def test_child_does_not_advance_parent():
    r = RngStream(3)
    r.child(4)
    assert r.counter == 0


@given(st.integers(0, 37), st.integers(1, 20))
@settings(max_examples=40, deadline=None)
def test_counter_addressing(skip, n):
    r = RngStream(9, 2)
    full = r.raw(skip + n)
    assert np.array_equal(RngStream(9, 2).at(skip).raw(n), full[skip:])


def test_split_draws_equal_single_draw():
    r = RngStream(11)
    a = np.concatenate([r.raw(3), r.raw(5), r.raw(1)])
    assert np.array_equal(a, RngStream(11).raw(9))


@pytest.mark.parametrize("n", [0, 1, 2, 7, 10])
def test_gaussian_word_accounting(n):
    r = RngStream(1)
    gaussian(r, (n,))
    assert r.counter == gaussian_words(n) == n + (n & 1)


def test_gaussian_moments():
    z = gaussian(RngStream(2), 200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1) < 0.01
    assert abs(np.mean(z ** 4) - 3) < 0.06


def test_gaussian_empty_shape():
    assert gaussian(RngStream(0), (0, 3)).shape == (0, 3)


def test_uniform_range_and_integers():
    u = RngStream(4).uniform(10_000)
    assert u.min() >= 0 and u.max() < 1
    k = RngStream(4).integers(1, 11, 10_000)
    assert k.min() == 1 and k.max() == 10
    assert isinstance(RngStream(4).uniform(), float)


def test_permutation_is_permutation():
    p = RngStream(8).permutation(50)
    assert sorted(p.tolist()) == list(range(50))


def test_sym_eig_reconstructs():
    a = np.random.default_rng(0).standard_normal((6, 6))
    m = a + a.T
    w, v = sym_eig(m)
    assert np.allclose((v * w) @ v.T, m, atol=1e-12)


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(SymmetryError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_sym_eig_rejects_nonsquare():
    with pytest.raises(ParameterError):
        sym_eig(np.ones((2, 3)))


def test_psd_sqrt_known():
    assert np.allclose(psd_sqrt(np.diag([4.0, 9.0, 0.0])), np.diag([2.0, 3.0, 0.0]))


def test_psd_sqrt_rejects_negative():
    with pytest.raises(NotPSDError):
        psd_sqrt(np.diag([1.0, -0.1]))


def test_psd_sqrt_clamps_tiny_negative():
    r = psd_sqrt(np.diag([1.0, -1e-12]))
    assert np.all(np.isfinite(r))


@given(st.integers(1, 12), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_psd_sqrt_squares_back(d, seed):
    a = np.random.default_rng(seed).standard_normal((d, d + 2))
    m = a @ a.T
    r = psd_sqrt(m)
    assert np.linalg.norm(r @ r - m) <= 1e-8 * max(np.linalg.norm(m), 1.0)
