import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdqt.numerics import ParameterError, Rng, ShapeError, as_matrix, matmul_ref, transpose
from oracles import scalar_gemm_oracle


def test_identity_product():
    np.testing.assert_array_equal(matmul_ref(np.eye(2), np.eye(2)), np.eye(2))


def test_hand_product():
    out = matmul_ref([[1, 2], [3, 4]], [[1], [1]])
    np.testing.assert_array_equal(out, [[3], [7]])


def test_random_product_matches_scalar_loop():
    g = Rng(3).generator
    a, b = g.normal(size=(7, 5)), g.normal(size=(5, 3))
    np.testing.assert_allclose(matmul_ref(a, b), scalar_gemm_oracle(a, b), rtol=0, atol=1e-12)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul_ref(np.ones((2, 3)), np.ones((2, 3)))


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        as_matrix([[1.0, np.nan]])


def test_transpose_cases():
    a = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(transpose(transpose(a)), a)
    np.testing.assert_array_equal(transpose([[5.0]]), [[5.0]])
    np.testing.assert_array_equal(transpose([[1, 2, 3]]), [[1], [2], [3]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_associativity(seed, n, k, m, p):
    g = np.random.default_rng(seed)
    a, b, c = g.normal(size=(n, k)), g.normal(size=(k, m)), g.normal(size=(m, p))
    left = matmul_ref(matmul_ref(a, b), c)
    right = matmul_ref(a, matmul_ref(b, c))
    scale = np.abs(a).max() * np.abs(b).max() * np.abs(c).max() * k * m
    assert np.max(np.abs(left - right)) <= 1e-9 * max(scale, 1.0)


def test_gaussian_zero_std_is_mean():
    assert np.all(Rng(0).gaussian(1.5, 0.0, 10) == 1.5)


def test_invalid_draw_params():
    with pytest.raises(ParameterError):
        Rng(0).uniform(1.0, 1.0)
    with pytest.raises(ParameterError):
        Rng(0).gaussian(0.0, -1.0)


def test_uniform_mean():
    draws = Rng(11).uniform(0.0, 1.0, 100_000)
    sigma = np.sqrt(1 / 12 / draws.size)
    assert abs(draws.mean() - 0.5) < min(0.01, 6 * sigma)
    assert draws.min() >= 0.0 and draws.max() < 1.0


def test_seed_determinism():
    np.testing.assert_array_equal(Rng(42).uniform(0, 1, 100), Rng(42).uniform(0, 1, 100))
    np.testing.assert_array_equal(Rng(42).split("x").gaussian(0, 1, 100),
                                  Rng(42).split("x").gaussian(0, 1, 100))


def test_split_streams_differ():
    r = Rng(5)
    a = r.split("a").uniform(0, 1, 10_000)
    b = r.split("b").uniform(0, 1, 10_000)
    assert np.mean(a != b) >= 0.99


def test_split_is_order_independent():
    r1, r2 = Rng(9), Rng(9)
    r1.split("other").uniform(0, 1, 50)
    np.testing.assert_array_equal(r1.split("x").uniform(0, 1, 5), r2.split("x").uniform(0, 1, 5))
