import math

import numpy as np
import pytest

from sfpc.bitchop import BitChop, ChopState, chop_decide, chop_epsilon, chop_step, chop_update_ema
from sfpc.errors import ContractError, NonFiniteError


def test_ema_examples():
    s = chop_update_ema(ChopState(n=5, m=23, mavg=2.0, alpha=0.1), 1.0)
    assert s.mavg == pytest.approx(1.9)
    assert chop_update_ema(ChopState(n=5, m=23, mavg=2.0, alpha=1.0), 0.7).mavg == 0.7
    assert chop_update_ema(ChopState(n=5, m=23), 3.0).mavg == 3.0


def test_ema_converges_monotonically():
    s = ChopState(n=5, m=23, mavg=5.0)
    prev = []
    for _ in range(200):
        s = chop_update_ema(s, 1.0)
        prev.append(s.mavg)
    assert all(a > b for a, b in zip(prev, prev[1:]))
    assert prev[-1] == pytest.approx(1.0, abs=1e-8)


def test_ema_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        chop_update_ema(ChopState(n=5, m=23), math.nan)


def test_decide_branches():
    s = ChopState(n=10, m=23, mavg=1.0)
    assert chop_decide(s, 0.8, eps=0.05) == 9
    assert chop_decide(s, 0.98, eps=0.05) == 10
    assert chop_decide(s, 1.2, eps=0.05) == 11
    # boundary: exactly eps away is "unchanged"
    assert chop_decide(s, 0.5, eps=0.5) == 10


def test_decide_clamps():
    assert chop_decide(ChopState(n=0, m=7, mavg=1.0), 0.1, eps=0.01) == 0
    assert chop_decide(ChopState(n=7, m=7, mavg=1.0), 5.0, eps=0.01) == 7


def test_epsilon():
    assert chop_epsilon(ChopState(n=5, m=23, mavg=2.0, rel_err=0.05)) == pytest.approx(0.1)
    assert chop_epsilon(ChopState(n=5, m=23, mavg=2.0)) == math.inf
    assert chop_epsilon(ChopState(n=5, m=23, mavg=2.0, rel_err=0.0)) == 0.0
    with pytest.raises(ContractError):
        chop_epsilon(ChopState(n=5, m=23, mavg=-1.0, rel_err=0.1))


def test_constant_relative_deviation_history():
    # every past loss sat 5% below its average: the statistic settles at 0.05
    s = ChopState(n=12, m=23, mavg=2.0, rel_err=0.05)
    s = chop_step(s, 1.9)
    assert s.rel_err == pytest.approx(0.05)


def test_zero_deviation_history_moves_on_any_difference():
    s = ChopState(n=12, m=23, mavg=2.0, rel_err=0.0)
    assert chop_decide(s, 2.0 - 1e-12) == 11
    assert chop_decide(s, 2.0 + 1e-12) == 13
    assert chop_decide(s, 2.0) == 12


def test_first_periods_unchanged():
    s = ChopState(n=12, m=23)
    s = chop_step(s, 10.0)
    assert s.n == 12 and s.mavg == 10.0 and s.rel_err is None
    s = chop_step(s, 0.1)  # huge drop, but no deviation history yet
    assert s.n == 12 and s.rel_err == pytest.approx(0.99)
    s = chop_step(s, 0.01)
    assert s.n == 11


def test_decide_uses_average_before_update():
    s = ChopState(n=12, m=23, mavg=1.0, rel_err=0.1, alpha=1.0)
    out = chop_step(s, 0.5)
    assert out.n == 11 and out.mavg == 0.5


def test_decreasing_losses_drive_width_to_zero():
    ctrl = BitChop(m=23)
    losses = [10.0 * 0.5 ** (k * k / 4) for k in range(60)]
    widths = [ctrl.observe(L) for L in losses]
    first_shrink = next(i for i, (a, b) in enumerate(zip([23] + widths, widths)) if b < a)
    assert 0 in widths
    assert widths.index(0) - first_shrink + 1 <= 23
    assert all(b <= a for a, b in zip(widths, widths[1:]))


def test_bounded_under_random_streams():
    rng = np.random.default_rng(0)
    for seed in range(20):
        ctrl = BitChop(m=7, alpha=float(rng.uniform(0.01, 1.0)))
        for L in np.exp(rng.normal(0, 2, 300)):
            w = ctrl.observe(float(L))
            assert 0 <= w <= 7


def test_deterministic():
    rng = np.random.default_rng(3)
    losses = np.exp(rng.normal(0, 0.5, 500)).tolist()
    a, b = BitChop(23), BitChop(23)
    assert [a.observe(x) for x in losses] == [b.observe(x) for x in losses]


def test_bypass_window_freezes_state():
    rng = np.random.default_rng(4)
    pre = np.exp(rng.normal(0, 0.3, 50)).tolist()
    post = np.exp(rng.normal(0, 0.3, 50)).tolist()
    ctrl = BitChop(23, cooldown=5)
    for x in pre:
        ctrl.observe(x)
    frozen = ctrl.state
    ctrl.notify_lr_change()
    assert ctrl.width == 23 and ctrl.bypassed
    window = [ctrl.observe(100.0 * (i + 1)) for i in range(6)]  # batch of change + 5
    assert window[:-1] == [23] * 5
    assert not ctrl.bypassed
    assert ctrl.state == frozen
    twin = BitChop(23)
    twin.state = frozen
    assert [ctrl.observe(x) for x in post] == [twin.observe(x) for x in post]


def test_longer_period_averages_losses():
    ctrl = BitChop(23, period=2)
    ctrl.observe(1.0)
    assert ctrl.state.mavg is None
    ctrl.observe(3.0)
    assert ctrl.state.mavg == 2.0


def test_state_validation():
    with pytest.raises(ContractError):
        ChopState(n=24, m=23)
    with pytest.raises(ContractError):
        ChopState(n=3, m=23, alpha=0.0)
    assert ChopState(n=3, m=23, bypass=True).width == 23
