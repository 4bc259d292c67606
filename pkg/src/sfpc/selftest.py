"""Built-in property checks behind ``sfpc selftest``."""

from __future__ import annotations

import math
import time

import numpy as np

from . import bitchop, gecko, packer, perfmodel, statsbench, trainer
from .floatcore import BF16, FP32, make_rng, quantize_mantissa, truncate_bits


def _bf16_roundtrip(quick):
    bits = np.arange(1 << 16, dtype=np.uint16)
    bits = bits[((bits >> 7) & 0xFF) != 0xFF]
    return np.array_equal(packer.decompress(packer.compress(bits, BF16)), bits)


def _fp32_roundtrip(quick):
    rng = make_rng(1)
    bits = rng.integers(0, 1 << 32, 10**5 if quick else 10**6, dtype=np.uint64).astype(np.uint32)
    bits = bits[((bits >> 23) & 0xFF) != 0xFF]
    return np.array_equal(packer.decompress(packer.compress(bits, FP32)), bits)


def _lossy_matches_truncation(quick):
    rng = make_rng(2)
    vals = rng.standard_normal(4099).astype(np.float32).view(np.uint32)
    return all(
        np.array_equal(packer.decompress(packer.compress(vals, FP32, w)), truncate_bits(vals, w, FP32))
        for w in (0, 3, 11, 23)
    )


def _size_formula(quick):
    rng = make_rng(3)
    for _ in range(20):
        n = int(rng.integers(1, 700))
        vals = rng.standard_normal(n).astype(np.float32).view(np.uint32)
        for variant in gecko.Variant:
            w = int(rng.integers(0, 24))
            if packer.size_account(vals, FP32, w, False, variant).total_bits != packer.compress(
                vals, FP32, w, False, variant
            ).payload_bits:
                return False
    return True


def _oracle_agreement(quick):
    rng = make_rng(4)
    for _ in range(200 if quick else 2000):
        g = np.clip(np.rint(rng.normal(127, rng.choice([1, 2, 4, 8, 64]), 64)), 0, 255).astype(int)
        if statsbench.oracle_encode_size(g) != gecko.encode(gecko.make_group(g)).total_bits:
            return False
    return True


def _quantizer_bf16(quick):
    M = np.arange(1 << 7, dtype=np.uint16)
    for n in range(8):
        q = quantize_mantissa(M, n, BF16)
        if not np.array_equal(quantize_mantissa(q, n, BF16), q):
            return False
        for k in range(n, 8):
            if not np.array_equal(quantize_mantissa(quantize_mantissa(M, k, BF16), n, BF16), q):
                return False
    return True


def _bitchop_branches(quick):
    s = bitchop.ChopState(n=10, m=23, mavg=1.0, rel_err=0.1)
    return (
        bitchop.chop_decide(s, 0.8) == 9
        and bitchop.chop_decide(s, 1.2) == 11
        and bitchop.chop_decide(s, 1.05) == 10
        and bitchop.chop_decide(bitchop.ChopState(n=0, m=23, mavg=1.0, rel_err=0.1), 0.5) == 0
        and bitchop.chop_decide(bitchop.ChopState(n=23, m=23, mavg=1.0, rel_err=0.1), 2.0) == 23
    )


def _baseline_equivalence(quick):
    base = dict(epochs=2, n_samples=300, seed=7)
    plain = trainer.train(trainer.TrainConfig(**base))
    qm = trainer.train(trainer.TrainConfig(quantizer="qm", gamma_schedule=((0, 0.0),), **base))
    return plain.losses == qm.losses and all(
        np.array_equal(a.W, b.W) for a, b in zip(plain.model.layers, qm.model.layers)
    )


def _perf_suites(quick):
    mem = perfmodel.run_report(perfmodel.read_traffic(perfmodel.shipped_trace("memory")))
    comp = perfmodel.run_report(perfmodel.read_traffic(perfmodel.shipped_trace("compute")))
    mixed = perfmodel.run_report(perfmodel.read_traffic(perfmodel.shipped_trace("mixed")))
    return (
        math.isclose(mem.speedup, 1 / mem.traffic_ratio, rel_tol=1e-12)
        and comp.speedup == 1.0
        and 1.0 < mixed.speedup < 1 / mixed.traffic_ratio
        and mixed.flipped > 0
    )


CHECKS = (
    ("BF16 exhaustive lossless round-trip", _bf16_roundtrip),
    ("FP32 random lossless round-trip", _fp32_roundtrip),
    ("lossy decode equals truncation", _lossy_matches_truncation),
    ("closed-form size equals emitted bits", _size_formula),
    ("exponent codec size equals brute-force oracle", _oracle_agreement),
    ("BF16 truncation idempotent and nested", _quantizer_bf16),
    ("width controller branches and clamps", _bitchop_branches),
    ("zero-penalty full-width run equals plain training", _baseline_equivalence),
    ("roofline synthetic suites", _perf_suites),
)


def run(stream, quick=True) -> bool:
    ok = True
    for name, check in CHECKS:
        start = time.perf_counter()
        try:
            passed = bool(check(quick))
            note = ""
        except Exception as exc:  # a crashing check is a failing check
            passed, note = False, f" ({type(exc).__name__}: {exc})"
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name} [{time.perf_counter() - start:.2f}s]{note}", file=stream)
    print("all checks passed" if ok else "some checks FAILED", file=stream)
    return ok
