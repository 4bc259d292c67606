import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfpc import packer
from sfpc.errors import ContractError, CorruptStreamError, NonFiniteError
from sfpc.floatcore import BF16, FP32, to_bits, truncate_bits
from sfpc.gecko import Variant


def finite_fp32(n, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(n) * scale).astype(np.float32).view(np.uint32)


def all_finite_bf16():
    b = np.arange(1 << 16, dtype=np.uint16)
    return b[((b >> 7) & 0xFF) != 0xFF]


def test_ones_fp32_sizes():
    block = packer.compress(np.full(64, 0x3F800000, np.uint32), FP32)
    assert block.data_bits == 8 * (8 + 23 + 1) + 7 * 8 * (0 + 23 + 1) == 1600
    assert block.meta_bits == 21
    assert np.array_equal(packer.decompress(block), np.full(64, 0x3F800000, np.uint32))


def test_ones_bf16_signless_zero_mantissa():
    block = packer.compress(np.full(64, 0x3F80, np.uint16), BF16, man_width=0, signless=True)
    assert (block.data_bits, block.meta_bits) == (64, 21)
    assert np.array_equal(packer.decompress(block), np.full(64, 0x3F80, np.uint16))


def test_row_descriptors_container_bits():
    rows = packer.row_descriptors(np.full(64, 0x3F800000, np.uint32), FP32)
    assert [r.container_bits for r in rows] == [32] + [24] * 7
    rows = packer.row_descriptors(np.full(64, 0x3F80, np.uint16), BF16, man_width=0, signless=True)
    assert [r.container_bits for r in rows] == [8] + [0] * 7


def test_lossless_fp32_million_values():
    bits = np.concatenate([
        finite_fp32(400_000, 1),
        finite_fp32(300_000, 2, scale=1e-30),
        np.random.default_rng(3).integers(0, 0x7F800000, 300_000, dtype=np.uint32),
    ])
    assert np.array_equal(packer.decompress(packer.compress(bits, FP32)), bits)


@pytest.mark.parametrize("variant", list(Variant))
def test_lossless_all_bf16(variant):
    bits = all_finite_bf16()
    assert np.array_equal(packer.decompress(packer.compress(bits, BF16, variant=variant)), bits)


@pytest.mark.parametrize("fmt, width", [(FP32, 0), (FP32, 5), (FP32, 17), (BF16, 4), (BF16, 0)])
@pytest.mark.parametrize("variant", list(Variant))
def test_lossy_equals_truncation(fmt, width, variant):
    bits = all_finite_bf16() if fmt is BF16 else finite_fp32(5000, 4)
    out = packer.decompress(packer.compress(bits, fmt, width, variant=variant))
    assert np.array_equal(out, truncate_bits(bits, width, fmt))
    if fmt is BF16 and width == 4:
        assert not np.any(out & 0b111)


@given(
    st.integers(1, 400),
    st.integers(0, 23),
    st.booleans(),
    st.sampled_from(list(Variant)),
    st.integers(0, 2**32 - 1),
)
@settings(max_examples=60, deadline=None)
def test_size_account_matches_stream(n, width, signless, variant, seed):
    bits = finite_fp32(n, seed % 1000, scale=float(2 ** (seed % 40 - 20)))
    if signless:
        bits &= np.uint32(0x7FFFFFFF)
    block = packer.compress(bits, FP32, width, signless, variant)
    acc = packer.size_account(bits, FP32, width, signless, variant)
    assert acc.total_bits == block.payload_bits
    assert acc.data_bits == block.data_bits == 8 * int(block.row_bits.sum())
    assert acc.meta_bits == block.meta_bits
    # flushed lanes round each lane up to whole lane words
    assert len(block.data) * 8 >= block.data_bits


@pytest.mark.parametrize("fmt", [FP32, BF16])
@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("signless", [False, True])
def test_reference_model_byte_identical(fmt, variant, signless):
    rng = np.random.default_rng(7)
    x = rng.standard_normal(203) * np.exp(rng.normal(0, 3, 203))
    bits = to_bits(np.abs(x) if signless else x, fmt)
    for width in (0, 3, fmt.m):
        block = packer.compress(bits, fmt, width, signless, variant)
        meta, data = packer.reference_compress(bits, fmt, width, signless, variant)
        assert (meta, data) == (block.meta, block.data)
        assert np.array_equal(packer.reference_decompress(block), packer.decompress(block))


def test_parallel_output_identical():
    bits = finite_fp32(50_000, 8)
    one = packer.compress(bits, FP32, 9).to_bytes()
    for jobs in (2, 3, 8):
        assert packer.compress(bits, FP32, 9, jobs=jobs).to_bytes() == one


def test_signless_rejects_negative():
    with pytest.raises(ContractError):
        packer.compress(np.array([0xBF800000], np.uint32), FP32, signless=True)


def test_nonfinite_requires_bypass():
    bits = finite_fp32(130, 1)
    bits[70] = 0x7FC00000
    bits[3] = 0xFF800000
    with pytest.raises(NonFiniteError):
        packer.compress(bits, FP32, 4)
    block = packer.compress(bits, FP32, 4, allow_nonfinite=True)
    out = packer.decompress(block)
    assert out[70] == 0x7FC00000 and out[3] == 0xFF800000
    # non-flagged groups are still truncated
    assert np.array_equal(out[128:], truncate_bits(bits[128:], 4, FP32))


def test_js_encode():
    assert packer.js_encode(np.zeros(64, np.uint16), BF16) == 64
    assert packer.js_encode(np.full(64, 0x3F80, np.uint16), BF16) == 64 + 1024
    v = np.full(1000, 0x4000, np.uint16)
    v[:300] = 0
    v[:10] = 0x8000  # negative zero is still zero
    assert packer.js_encode(v, BF16) == 12200


def test_container_roundtrip_and_sections():
    bits = finite_fp32(1000, 5).reshape(10, 100)
    block = packer.compress(bits, FP32, 11, variant=Variant.FIXED_BIAS, bias=120)
    buf = packer.serialize(block)
    again = packer.parse(buf)
    assert again.header == block.header
    assert (again.meta, again.data, again.data_bits) == (block.meta, block.data, block.data_bits)
    assert packer.read_section(buf, "meta") == block.meta
    assert packer.read_section(buf, "data") == block.data
    out = packer.decompress(buf)
    assert out.shape == (10, 100)
    assert np.array_equal(out, truncate_bits(bits, 11, FP32))


def test_header_layout_by_struct():
    bits = np.full(70, 0x3F80, np.uint16).reshape(7, 10)
    buf = packer.serialize(packer.compress(bits, BF16, 3, signless=True))
    magic, ver, fmt, var, bias, flags, man, lane, ndim = struct.unpack_from("<4sBBBBBHBB", buf)
    assert (magic, ver, fmt, var, bias, flags, man, lane, ndim) == (b"SFPC", 1, 1, 0, 127, 1, 3, 16, 2)
    assert struct.unpack_from("<2Q", buf, 13) == (7, 10)
    count, groups, pad, meta_len, data_len = struct.unpack_from("<QQBQQ", buf, 29)
    assert (count, groups, pad) == (70, 2, 58)
    assert len(buf) == 29 + 33 + meta_len + data_len


def test_table_index_mode():
    bits = finite_fp32(100, 6)
    block = packer.compress(bits, FP32, 6, table_index=2)
    assert block.header.mantissa_table and block.header.man_width == 2
    with pytest.raises(ContractError):
        packer.decompress(block)
    out = packer.decompress(packer.serialize(block), mantissa_table=[23, 0, 6])
    assert np.array_equal(out, truncate_bits(bits, 6, FP32))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b[:-1],
        lambda b: b + b"\0",
        lambda b: b"XFPC" + b[4:],
        lambda b: b[:4] + b"\x09" + b[5:],
        lambda b: b[:20],
    ],
)
def test_corruption_detected(mutate):
    buf = packer.serialize(packer.compress(finite_fp32(300, 2), FP32))
    with pytest.raises(CorruptStreamError) as err:
        packer.decompress(mutate(buf))
    assert err.value.offset is not None
    assert err.value.exit_code == 2


def test_corrupt_meta_length():
    block = packer.compress(finite_fp32(300, 2), FP32)
    bad = packer.with_header(block, meta_len=block.header.meta_len + 1)
    buf = bad.header.pack() + block.meta + b"\0" + block.data
    with pytest.raises(CorruptStreamError):
        packer.decompress(buf)


def test_tensor_files(tmp_path):
    bits = finite_fp32(64, 1).reshape(8, 8)
    packer.write_tensor(tmp_path / "t.npy", bits, FP32)
    back, fmt, shape = packer.read_tensor(tmp_path / "t.npy")
    assert fmt is FP32 and shape == (8, 8) and np.array_equal(back, bits)
    b16 = np.arange(30, dtype=np.uint16)
    packer.write_tensor(tmp_path / "t.bin", b16, BF16)
    back, fmt, shape = packer.read_tensor(tmp_path / "t.bin")
    assert fmt is BF16 and np.array_equal(back, b16)
    with pytest.raises(ContractError):
        packer.read_tensor(tmp_path / "t.bin", shape=(7,))
