import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aisc.numerics import (
    SplitMix64,
    bits_to_float,
    discard_mantissa_bits,
    discard_mantissa_bits_array,
    div_to_mul_array,
    float_to_bits,
    ieee_div,
    rcp12,
    round_to_nearest_int,
    round_to_nearest_int_array,
    splitmix_uniforms,
)

finite = st.floats(allow_nan=False, allow_infinity=False)
normal = finite.filter(lambda x: x != 0 and abs(x) >= 2.2250738585072014e-308)


def fields(x):
    b = struct.unpack("<Q", struct.pack("<d", x))[0]
    return b >> 63, (b >> 52) & 0x7FF, b & ((1 << 52) - 1)


@pytest.mark.parametrize(
    "x,k,expected",
    [(1.0, 32, 1.0), (2.75, 51, 2.0), (-1.5, 52, -1.0), (2.75, 48, 2.75), (0.1, 0, 0.1)],
)
def test_discard_examples(x, k, expected):
    assert discard_mantissa_bits(x, k) == expected


def test_discard_specials_pass_through():
    assert discard_mantissa_bits(math.inf, 40) == math.inf
    assert discard_mantissa_bits(-math.inf, 40) == -math.inf
    assert math.isnan(discard_mantissa_bits(math.nan, 40))


def test_discard_rejects_too_many_bits():
    with pytest.raises(ValueError):
        discard_mantissa_bits(1.0, 53)


@given(normal, st.integers(0, 52))
def test_discard_bound_sign_exponent_idempotent(x, k):
    y = discard_mantissa_bits(x, k)
    assert abs(x - y) / abs(x) < 2.0 ** (k - 51)
    sx, ex, _ = fields(x)
    sy, ey, my = fields(y)
    assert (sx, ex) == (sy, ey)
    assert my & ((1 << k) - 1) == 0
    assert discard_mantissa_bits(y, k) == y


@given(normal, st.integers(0, 52), st.integers(0, 52))
def test_discard_error_monotone_in_k(x, k1, k2):
    k1, k2 = min(k1, k2), max(k1, k2)
    assert abs(x - discard_mantissa_bits(x, k1)) <= abs(x - discard_mantissa_bits(x, k2))


@pytest.mark.parametrize("x,expected", [(2.4, 2.0), (-1.5, -2.0), (1.5, 2.0), (7.0, 7.0), (0.4, 0.0), (-0.4, -0.0), (2.5, 3.0)])
def test_round_examples(x, expected):
    r = round_to_nearest_int(x)
    assert r == expected and math.copysign(1, r) == math.copysign(1, expected)


@given(finite)
def test_round_is_nearest_integer(x):
    r = round_to_nearest_int(x)
    assert r == math.floor(r)
    assert abs(x - r) <= 0.5


def test_rcp12_examples():
    assert rcp12(2.0) == 0.5
    assert rcp12(4.0) == 0.25
    assert abs(3 * rcp12(3.0) - 1) <= 2.0 ** -11
    assert rcp12(0.0) == math.inf and rcp12(-0.0) == -math.inf
    assert rcp12(-3.0) == -rcp12(3.0)


def test_ieee_div_specials():
    assert ieee_div(1.0, 0.0) == math.inf
    assert ieee_div(-1.0, 0.0) == -math.inf
    assert ieee_div(1.0, -0.0) == -math.inf
    assert math.isnan(ieee_div(0.0, 0.0))


@given(finite)
def test_bits_roundtrip(x):
    assert bits_to_float(float_to_bits(x)) == x


@pytest.mark.parametrize("k", [0, 1, 20, 32, 48, 52])
def test_discard_array_matches_scalar_both_paths(k):
    rng = np.random.default_rng(k)
    x = np.concatenate([rng.normal(0, 1e3, 500), [np.inf, -np.inf, np.nan, 0.0, -0.0, 5e-324]])
    expected = np.array([discard_mantissa_bits(float(v), k) for v in x])
    for jit in (True, False):
        got = discard_mantissa_bits_array(x, k, jit=jit)
        assert np.array_equal(got.view(np.int64), expected.view(np.int64))


def test_round_array_matches_scalar_both_paths():
    x = np.concatenate([np.random.default_rng(0).uniform(-10, 10, 1000), np.arange(-5, 5) + 0.5, [-0.2, np.inf, np.nan]])
    expected = np.array([round_to_nearest_int(float(v)) for v in x])
    for jit in (True, False):
        got = round_to_nearest_int_array(x, jit=jit)
        assert np.array_equal(got.view(np.int64), expected.view(np.int64))


@pytest.mark.parametrize("refine", [False, True])
def test_div_array_matches_scalar_both_paths(refine):
    from aisc.transforms import Variant, div_to_mul

    rng = np.random.default_rng(3)
    d = np.concatenate([rng.uniform(-1e3, 1e3, 500), [0.0, -0.0, np.inf]])
    n = rng.uniform(-5, 5, d.size)
    variant = Variant.DIVTOMUL_NR if refine else Variant.DIVTOMUL12
    expected = np.array([div_to_mul(float(a), float(b), variant)[0] for a, b in zip(n, d)])
    for jit in (True, False):
        got = div_to_mul_array(n, d, refine, jit=jit)
        assert np.array_equal(got.view(np.int64), expected.view(np.int64))


def test_splitmix_reference_vectors():
    # published SplitMix64 outputs
    g = SplitMix64(0)
    assert g.next_u64() == 0xE220A8397B1DCDAF
    assert g.next_u64() == 0x6E789E6AA1B965F4
    g = SplitMix64(1234567)
    assert [g.next_u64() for _ in range(3)] == [6457827717110365317, 3203168211198807973, 9817491932198370423]


@pytest.mark.parametrize("seed", [0, 1, 42, 2**63 + 5, 2**64 - 1])
def test_splitmix_array_matches_class(seed):
    g = SplitMix64(seed)
    expected = np.array([g.random() for _ in range(257)])
    for jit in (True, False):
        assert np.array_equal(splitmix_uniforms(seed, 257, jit=jit), expected)
    assert expected.min() >= 0.0 and expected.max() < 1.0
