import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dego.kernels import (
    ArdPExpKernel,
    ArdSqExpKernel,
    KnotMapping,
    MappedKernel,
    gram,
    kernel_eval,
    map_point,
    mapped_kernel_eval,
)


def test_zero_distance_gives_variance():
    k = ArdPExpKernel(1.7, [2.0, 0.5], [1.3, 2.0])
    assert kernel_eval(k, [0.2, 0.4], [0.2, 0.4]) == pytest.approx(1.7)


def test_unit_case():
    k = ArdPExpKernel(1.0, [1.0], [2.0])
    assert kernel_eval(k, [0.0], [1.0]) == pytest.approx(math.exp(-1.0))


def test_mixed_powers_value():
    k = ArdPExpKernel(2.0, [1.0, 3.0], [1.0, 2.0])
    assert kernel_eval(k, [0.0, 0.0], [0.5, 0.5]) == pytest.approx(0.5730096, abs=1e-7)


def test_gram_shapes_and_diagonal(rng):
    k = ArdPExpKernel(0.8, [3.0, 1.0], [1.5, 1.9])
    X = rng.random((4, 2))
    G = gram(k, X, X)
    np.testing.assert_allclose(np.diag(G), 0.8)
    assert gram(k, X[:1]).shape == (1, 1)


def test_gram_matches_elementwise_loop(rng):
    k = ArdPExpKernel(1.3, [2.0, 0.7, 5.0], [1.2, 2.0, 1.7])
    X, X2 = rng.random((3, 3)), rng.random((3, 3))
    loop = np.array([[1.3 * math.exp(-sum(k.rates[d] * abs(a[d] - b[d]) ** k.powers[d] for d in range(3))) for b in X2] for a in X])
    np.testing.assert_allclose(gram(k, X, X2), loop, rtol=0, atol=1e-14)


def test_sqexp_equals_pexp_with_power_two(rng):
    X = rng.random((5, 2))
    a = ArdSqExpKernel(1.1, [4.0, 0.3]).gram(X)
    b = ArdPExpKernel(1.1, [4.0, 0.3], [2.0, 2.0]).gram(X)
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_invalid_hyperparameters():
    with pytest.raises(ValueError):
        ArdPExpKernel(1.0, [1.0], [2.5])
    with pytest.raises(ValueError):
        ArdPExpKernel(-1.0, [1.0], [2.0])


def test_uniform_mapping_is_identity(rng):
    X = rng.random((6, 2))
    np.testing.assert_array_equal(KnotMapping.uniform(2, 4)(X), X)


def test_two_knot_trapezoid_value():
    assert map_point(KnotMapping([[1.0, 3.0]]), [0.5])[0] == pytest.approx(0.375)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 50.0), min_size=2, max_size=8))
def test_mapping_is_monotone_and_normalized(rho):
    m = KnotMapping([rho])
    assert map_point(m, [0.0])[0] == pytest.approx(0.0, abs=1e-15)
    assert map_point(m, [1.0])[0] == pytest.approx(1.0, abs=1e-12)
    g = m(np.linspace(0, 1, 101)[:, None])[:, 0]
    assert np.all(np.diff(g) >= -1e-15)


def test_mapping_matches_numeric_integral():
    rho = np.array([4.0, 0.5, 2.0, 1.0])
    m = KnotMapping([rho])
    knots = np.linspace(0, 1, 4)
    fine = np.linspace(0, 1, 200001)
    dens = np.interp(fine, knots, rho)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(fine))])
    for x in (0.1, 0.4, 0.77):
        assert map_point(m, [x])[0] == pytest.approx(np.interp(x, fine, cum) / cum[-1], abs=1e-9)


def test_mapped_kernel_composition():
    k = ArdPExpKernel(1.4, [2.0], [1.6])
    m = KnotMapping([[5.0, 1.0, 0.2]])
    x, x2 = [0.15], [0.6]
    assert mapped_kernel_eval(k, m, x, x2) == pytest.approx(kernel_eval(k, map_point(m, x), map_point(m, x2)))
    assert mapped_kernel_eval(k, KnotMapping.uniform(1, 3), x, x2) == pytest.approx(kernel_eval(k, x, x2))
    assert mapped_kernel_eval(k, m, x, x) == pytest.approx(1.4)
    assert MappedKernel(k, m).gram(np.array([x, x2])).shape == (2, 2)
