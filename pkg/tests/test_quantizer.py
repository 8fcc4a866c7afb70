import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdqt.numerics import Rng
from hdqt.quantizer import (
    QuantConfig,
    QuantTensor,
    calibrate_scale,
    count_saturated,
    dequantize,
    max_code,
    quantize_nearest,
    quantize_stochastic,
)
from oracles import sr_mean_estimator


def test_defaults():
    c = QuantConfig()
    assert (c.input_bits, c.accum_bits, c.tile_size, c.fwd_outlier_scale) == (4, 8, 32, 0.975)
    assert c.rounding_fwd == "nearest" and c.rounding_bwd_sensitive == "stochastic"


@pytest.mark.parametrize("kw", [
    {"input_bits": 1}, {"input_bits": 17}, {"accum_bits": 3}, {"accum_bits": 33},
    {"input_bits": 8, "accum_bits": 6}, {"tile_size": 0}, {"fwd_outlier_scale": 0.0},
    {"fwd_outlier_scale": 1.1}, {"rounding_fwd": "stochastic"},
])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        QuantConfig(**kw)


def test_config_round_trip():
    c = QuantConfig(input_bits=5, accum_bits=12, tile_size=8)
    assert QuantConfig.from_dict(c.to_dict()) == c


def test_calibrate_examples():
    assert calibrate_scale(np.array([[-2.0, 1.0]]), 1.0) == 0.5
    assert calibrate_scale(np.zeros((1, 2)), 1.0) == 1.0
    assert quantize_nearest(np.zeros((1, 2)), 4, 1.0).codes.tolist() == [[0, 0]]
    with pytest.raises(ValueError):
        calibrate_scale(np.zeros((0, 3)))


def test_outlier_scale_saturates_top():
    x = np.array([[0.5, 0.98, 1.0, -0.99]])
    alpha = calibrate_scale(x, 0.975)
    assert alpha == pytest.approx(1 / 0.975)
    q = quantize_nearest(x, 4, alpha)
    assert q.codes[0, 1:].tolist() == [7, 7, -7]
    assert count_saturated(x, 4, alpha) >= 3


def test_nearest_examples():
    assert quantize_nearest(np.array([[0.0]]), 4, 3.0).codes[0, 0] == 0
    q = quantize_nearest(np.array([[0.3]]), 4, 1.0)
    assert q.codes[0, 0] == 2 and dequantize(q)[0, 0] == 0.25
    q = quantize_nearest(np.array([[1.0]]), 4, 1.0)
    assert q.codes[0, 0] == 7 and dequantize(q)[0, 0] == 0.875


def test_round_half_away_from_zero():
    # 0.3125 * 8 = 2.5 exactly
    q = quantize_nearest(np.array([[0.3125, -0.3125]]), 4, 1.0)
    assert q.codes.tolist() == [[3, -3]]


def test_stochastic_integral_is_deterministic():
    x = np.full((1, 50), 0.25)
    assert np.all(quantize_stochastic(x, 4, 1.0, Rng(0)).codes == 2)


def test_stochastic_saturated_is_deterministic():
    x = np.full((1, 50), 3.0)
    assert np.all(quantize_stochastic(x, 4, 1.0, Rng(0)).codes == 7)


def test_stochastic_mean_24():
    x = np.full(100_000, 0.3)  # v = 2.4
    codes = quantize_stochastic(x[None, :], 4, 1.0, Rng(1)).codes
    assert set(np.unique(codes).tolist()) == {2, 3}
    sigma = np.sqrt(0.24 / x.size)
    assert abs(codes.mean() - 2.4) < min(0.01, 6 * sigma)


def test_sr_oracle_agrees():
    assert abs(sr_mean_estimator(2.4, 100_000) - 2.4) < 0.01


def test_dequantize_examples():
    assert np.all(dequantize(QuantTensor(np.zeros((2, 2), dtype=np.int64), 4, 0.125)) == 0)
    assert dequantize(QuantTensor(np.array([[7]]), 4, 0.125))[0, 0] == 0.875


@pytest.mark.parametrize("bits", [3, 4, 8])
def test_code_count(bits):
    x = np.linspace(-1.5, 1.5, 10_001)[None, :]
    codes = np.unique(quantize_nearest(x, bits, 1.0).codes)
    assert len(codes) == 2**bits - 1
    assert codes.min() == -max_code(bits) and codes.max() == max_code(bits)


arrays = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=40).map(
    lambda v: np.array(v)[None, :])


@settings(max_examples=60, deadline=None)
@given(arrays, st.sampled_from([3, 4, 8]))
def test_idempotence(x, bits):
    alpha = calibrate_scale(x, 1.0)
    q = quantize_nearest(x, bits, alpha)
    d = dequantize(q)
    q2 = quantize_nearest(d, bits, alpha)
    np.testing.assert_array_equal(q2.codes, q.codes)
    np.testing.assert_array_equal(dequantize(q2), d)


@settings(max_examples=60, deadline=None)
@given(arrays, st.sampled_from([3, 4, 8]))
def test_symmetry(x, bits):
    alpha = calibrate_scale(x, 1.0)
    np.testing.assert_array_equal(quantize_nearest(-x, bits, alpha).codes,
                                  -quantize_nearest(x, bits, alpha).codes)


@settings(max_examples=60, deadline=None)
@given(arrays, st.sampled_from([3, 4, 8]), st.floats(0.5, 1.0))
def test_bounded_error(x, bits, outlier):
    alpha = calibrate_scale(x, outlier)
    inside = np.abs(alpha * x) <= 1
    err = np.abs(dequantize(quantize_nearest(x, bits, alpha)) - x)
    # the half-step bound, except where the symmetric clamp removes the +2^(b-1) level
    top = max_code(bits) * 2.0 ** -(bits - 1) / alpha
    bound = np.where(np.abs(x) > top, 2.0 ** -(bits - 1) / alpha, 2.0 ** -bits / alpha)
    assert np.all(err[inside] <= bound[inside] * (1 + 1e-12) + 1e-12)


@pytest.mark.parametrize("bits", [3, 4, 8])
def test_sr_unbiased(bits):
    draws = 100_000
    x = np.array([0.123, -0.456, 0.7])
    alpha = 1.0
    rng = Rng(bits)
    total = np.zeros(3)
    for i in range(10):
        total += dequantize(quantize_stochastic(np.tile(x, (draws // 10, 1)), bits, alpha, rng.split(str(i)))).sum(0)
    mean = total / draws
    step = 2.0 ** -(bits - 1) / alpha
    assert np.all(np.abs(mean - x) < 6 * step / np.sqrt(4 * draws))
