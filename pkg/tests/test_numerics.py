import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dego.numerics import NotPositiveDefinite, cholesky, make_rng, mvn_logpdf, norm_cdf, norm_pdf


def test_cholesky_identity_is_exact():
    f = cholesky(np.eye(3))
    np.testing.assert_array_equal(f.L, np.eye(3))
    assert f.jitter == 0.0


def test_cholesky_hand_expanded_2x2():
    f = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(f.L, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-15)


def test_cholesky_zero_matrix_raises():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.zeros((2, 2)))


def test_cholesky_rejects_asymmetric():
    with pytest.raises(ValueError):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_cholesky_adds_jitter_for_singular_psd():
    v = np.array([1.0, 2.0, 3.0])
    f = cholesky(np.outer(v, v))
    assert f.jitter > 0.0
    np.testing.assert_allclose(f.matrix(), np.outer(v, v) + f.jitter * np.eye(3), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_cholesky_reconstructs_random_spd(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    S = A @ A.T + n * np.eye(n)
    f = cholesky(S)
    np.testing.assert_allclose(f.matrix(), S, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(f.solve(S), np.eye(n), atol=1e-9)
    assert f.logdet() == pytest.approx(np.linalg.slogdet(S)[1], rel=1e-12)


def test_gaussian_density_and_cdf_values():
    assert norm_pdf(0.0) == pytest.approx(0.3989423, abs=1e-7)
    assert norm_cdf(0.0) == 0.5
    assert norm_cdf(1.0) == pytest.approx(0.8413447, abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30))
def test_cdf_symmetry_and_range(z):
    assert 0.0 <= norm_cdf(z) <= 1.0
    assert norm_cdf(z) + norm_cdf(-z) == pytest.approx(1.0, abs=1e-15)
    assert norm_pdf(z) == pytest.approx(norm_pdf(-z))


def test_mvn_logpdf_unit_cases():
    f = cholesky(np.eye(1))
    assert mvn_logpdf([0.0], [0.0], f) == pytest.approx(-0.9189385, abs=1e-7)
    assert mvn_logpdf([1.0], [0.0], f) == pytest.approx(-1.4189385, abs=1e-7)


def test_mvn_logpdf_matches_dense_inverse(rng):
    A = rng.standard_normal((4, 4))
    S = A @ A.T + np.eye(4)
    y, m = rng.standard_normal(4), rng.standard_normal(4)
    r = y - m
    dense = -0.5 * (4 * math.log(2 * math.pi) + math.log(np.linalg.det(S)) + r @ np.linalg.inv(S) @ r)
    assert mvn_logpdf(y, m, cholesky(S)) == pytest.approx(dense, abs=1e-10)


def test_mvn_logpdf_dimension_mismatch():
    with pytest.raises(ValueError):
        mvn_logpdf(np.zeros(3), np.zeros(3), cholesky(np.eye(2)))


def test_make_rng_is_deterministic_and_passes_generators():
    assert make_rng(7).random() == make_rng(7).random()
    g = np.random.default_rng(1)
    assert make_rng(g) is g
