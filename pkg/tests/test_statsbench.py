import csv

import numpy as np
import pytest

from sfpc import gecko, statsbench as sb, trainer
from sfpc.errors import ContractError
from sfpc.statsbench import SyntheticDistribution

# Frozen from a seeded sweep (64 Ki exponents, seed 0); regression bounds, not targets.
FROZEN_DELTA = {1: 0.499664306640625, 2: 0.594482421875, 4: 0.6956024169921875, 8: 0.8011322021484375}


def test_oracle_examples():
    assert sb.oracle_encode_size(np.full((8, 8), 127)) == 85
    g = np.full((8, 8), 127)
    g[3, 2] = 130
    assert sb.oracle_encode_size(g) == 109
    assert sb.oracle_encode_size([127] * 8, "fixed") == 3
    assert sb.oracle_encode_size([128, 126] + [127] * 6, "fixed") == 19


def test_oracle_equals_encoder_on_10k_groups():
    rng = np.random.default_rng(2024)
    for i in range(10_000):
        kind = i % 3
        if kind == 0:
            e = rng.integers(0, 256, 64)
        elif kind == 1:
            e = np.clip(np.rint(rng.normal(127, rng.choice([1, 2, 4, 8]), 64)), 0, 255)
        else:
            e = rng.choice([0, 1, 127, 254, 255], 64)
        assert sb.oracle_encode_size(e) == gecko.encode_delta(gecko.make_group(e)).total_bits


def test_distributions_in_range():
    for d in sb.default_sweep(size=5000):
        e = d.exponents()
        assert e.size == 5000 and e.min() >= 0 and e.max() <= 255
    with pytest.raises(ContractError):
        SyntheticDistribution("zipf")


def test_sweep_regression_bounds():
    rows = {r["source"]: r for r in sb.ratio_sweep(sb.default_sweep())}
    for sigma, frozen in FROZEN_DELTA.items():
        assert rows[f"gaussian(sigma={sigma})"]["ratio"] == pytest.approx(frozen, rel=1e-12)
    assert rows["uniform"]["ratio"] >= 1.0
    ratios = [rows[f"gaussian(sigma={s})"]["ratio"] for s in (1, 2, 4, 8)]
    assert ratios == sorted(ratios)


def test_cdf_monotone_and_sums_to_one():
    for r in sb.ratio_sweep(sb.default_sweep(size=4096)):
        cdf = np.array(r["cdf"])
        assert np.all(np.diff(cdf) >= 0)
        assert cdf[-1] == pytest.approx(1.0)


def test_fixed_variant_sweep():
    rows = sb.ratio_sweep(sb.default_sweep(size=4096), "fixed")
    assert all(0 < r["ratio"] for r in rows)


def test_write_sweep(tmp_path):
    sb.write_sweep(tmp_path / "s.csv", sb.ratio_sweep(sb.default_sweep(size=1024)))
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert rows[0]["source"] == "uniform" and "cdf_9" in rows[0]


def test_trace_replay_below_one_after_first_epoch(tmp_path):
    cfg = trainer.TrainConfig(epochs=3, n_samples=300, trace_raw=True)
    trainer.train(cfg).trace.save(tmp_path / "t.npz")
    e = sb.trace_exponents(tmp_path / "t.npz", epoch_min=1)
    assert gecko.tensor_account(e).ratio < 1.0
    d = SyntheticDistribution("trace", trace_path=str(tmp_path / "t.npz"), tensor="w1")
    assert sb.ratio_sweep([d])[0]["ratio"] < 1.0
