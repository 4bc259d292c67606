import math
import struct

import numpy as np
import pytest

from sfpc.errors import ContractError, NonFiniteError
from sfpc.floatcore import (
    BF16,
    FP32,
    FloatTriple,
    decompose,
    float32_to_bf16_bits,
    bf16_bits_to_float32,
    from_bits,
    get_format,
    make_rng,
    quantize_mantissa,
    quantize_stochastic,
    recompose,
    sample_bitlength,
    split_seed,
    to_bits,
    truncate_bits,
    value_scale,
)


def f32_bits(x):
    return struct.unpack("<I", struct.pack("<f", x))[0]


def test_formats():
    assert (FP32.m, FP32.exponent_bits, FP32.bias, FP32.width) == (23, 8, 127, 32)
    assert (BF16.m, BF16.exponent_bits, BF16.bias, BF16.width) == (7, 8, 127, 16)
    assert get_format("bf16") is BF16
    with pytest.raises(ContractError):
        get_format("fp16")


@pytest.mark.parametrize(
    "bits, fmt, triple",
    [
        (0x3F800000, FP32, (0, 127, 0)),
        (0x40490FDB, FP32, (0, 128, 0x490FDB)),
        (0x3FC0, BF16, (0, 127, 0x40)),
    ],
)
def test_decompose_known(bits, fmt, triple):
    assert tuple(decompose(bits, fmt)) == triple


@pytest.mark.parametrize(
    "triple, fmt, bits",
    [((0, 127, 0), FP32, 0x3F800000), ((1, 128, 0x200000), FP32, 0xC0200000), ((0, 0, 0), BF16, 0)],
)
def test_recompose_known(triple, fmt, bits):
    assert recompose(FloatTriple(*triple), fmt) == bits


def test_pi_matches_struct():
    assert f32_bits(math.pi) == 0x40490FDB
    assert f32_bits(-2.5) == 0xC0200000


def test_recompose_rejects_out_of_range():
    with pytest.raises(ContractError):
        recompose(FloatTriple(0, 256, 0), FP32)
    with pytest.raises(ContractError):
        recompose(FloatTriple(0, 1, 1 << 7), BF16)
    with pytest.raises(ContractError):
        recompose(FloatTriple(2, 1, 0), BF16)


def test_bf16_exhaustive_roundtrip():
    bits = np.arange(1 << 16, dtype=np.uint16)
    t = decompose(bits, BF16)
    assert np.array_equal(recompose(t, BF16), bits)
    # independent field split
    assert np.array_equal(t.sign, bits >> 15)
    assert np.array_equal(t.exponent, (bits >> 7) & 0xFF)
    assert np.array_equal(t.mantissa, bits & 0x7F)


def test_fp32_sampled_roundtrip_with_specials():
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 1 << 32, 10**6, dtype=np.uint64).astype(np.uint32)
    specials = np.array(
        [0, 0x80000000, 1, 0x007FFFFF, 0x7F800000, 0xFF800000, 0x7FC00001, 0x7F800001, 0xFFFFFFFF],
        dtype=np.uint32,
    )
    bits = np.concatenate([bits, specials])
    assert np.array_equal(recompose(decompose(bits, FP32), FP32), bits)


def test_quantize_examples():
    assert quantize_mantissa(0b1011011, 3, BF16) == 0b1010000
    assert quantize_mantissa(0b1011011, 0, BF16) == 0
    assert quantize_mantissa(0x7FFFFF, 23, FP32) == 0x7FFFFF
    with pytest.raises(ContractError):
        quantize_mantissa(5, 8, BF16)
    with pytest.raises(ContractError):
        quantize_mantissa(5, -1, BF16)


def test_quantize_exhaustive_bf16_properties():
    M = np.arange(128, dtype=np.uint16)
    for n in range(8):
        q = quantize_mantissa(M, n, BF16)
        # top n bits kept, computed by shifting instead of masking
        expect = (M >> (7 - n)) << (7 - n)
        assert np.array_equal(q, expect)
        assert np.array_equal(quantize_mantissa(q, n, BF16), q)
        for n2 in range(n, 8):
            assert np.array_equal(quantize_mantissa(quantize_mantissa(M, n2, BF16), n, BF16), q)


def test_stochastic_integer_n_is_deterministic():
    rng, twin = make_rng(0), make_rng(0)
    assert quantize_stochastic(0b1011011, 3.0, BF16, rng) == 0b1010000
    assert rng.random() == twin.random()  # no randomness consumed
    assert all(quantize_stochastic(0b1111111, 0.0, BF16, rng) == 0 for _ in range(20))


def test_stochastic_branch_frequency():
    rng = make_rng(123)
    draws = 10**5
    hi = quantize_mantissa(0b1011011, 3, BF16)
    hits = sum(quantize_stochastic(0b1011011, 2.5, BF16, rng) == hi for _ in range(draws))
    assert 0.49 <= hits / draws <= 0.51


def test_sample_bitlength_clips():
    rng = make_rng(1)
    assert sample_bitlength(30.7, rng, BF16) == 7
    assert sample_bitlength(-1.0, rng, BF16) == 0
    with pytest.raises(ContractError):
        sample_bitlength(float("nan"), rng, BF16)


def test_truncate_rejects_nonfinite_unless_bypassed():
    bits = np.array([0x3F800001, 0x7FC00001, 0x7F800000], dtype=np.uint32)
    with pytest.raises(NonFiniteError):
        truncate_bits(bits, 4, FP32)
    out = truncate_bits(bits, 0, FP32, allow_nonfinite=True)
    assert out.tolist() == [0x3F800000, 0x7FC00001, 0x7F800000]


def test_truncate_subnormal_is_mask_only():
    assert truncate_bits(0x000007FF, 12, FP32) == 0x00000000
    assert truncate_bits(0x00000FFF, 12, FP32) == 0x00000800
    assert truncate_bits(0x00700FFF, 3, FP32) == 0x00700000


def test_bf16_conversion_round_to_nearest_even():
    # 1 + 2^-8 is exactly halfway between two BF16 values: ties to even (1.0)
    x = np.array([1 + 2**-8, 1 + 3 * 2**-8, -2.5, np.inf], dtype=np.float32)
    assert float32_to_bf16_bits(x).tolist() == [0x3F80, 0x3F82, 0xC020, 0x7F80]
    nan = float32_to_bf16_bits(np.array([np.nan], dtype=np.float32))
    assert (nan[0] >> 7) & 0xFF == 0xFF and nan[0] & 0x7F
    finite = np.arange(1 << 16, dtype=np.uint16)
    finite = finite[((finite >> 7) & 0xFF) != 0xFF]
    assert np.array_equal(float32_to_bf16_bits(bf16_bits_to_float32(finite)), finite)


def test_to_from_bits():
    x = np.array([1.0, -0.375, 3e-41])
    assert np.array_equal(from_bits(to_bits(x, FP32), FP32), x.astype(np.float32))
    assert to_bits(np.array([1.0]), BF16).dtype == np.uint16


def test_value_scale_subnormal_uses_min_exponent():
    assert value_scale(127, FP32) == 2.0**-23
    assert value_scale(0, FP32) == value_scale(1, FP32) == 2.0**-149


def test_split_seed_reproducible_and_distinct():
    draws = [make_rng(s).random() for s in split_seed(5, 3)]
    assert draws == [make_rng(s).random() for s in split_seed(5, 3)]
    assert len(set(draws)) == 3
