"""Loss-driven, network-wide mantissa width controller (BitChop).

Once per period (one batch by default) the training loop writes the loss to
the controller. The controller compares it with an exponential moving average
of past losses: a loss clearly below the average shrinks the mantissa by one
bit, one clearly above grows it by one bit, and anything in between leaves
it unchanged. "Clearly" means by more than ``eps = Mavg * r``, where ``r`` is
an EMA (same decay) of past relative deviations ``|L - Mavg| / Mavg``.

Each period decides against the average *before* the new loss is folded in.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

from .errors import ContractError, NonFiniteError


@dataclass(frozen=True)
class ChopState:
    n: int
    m: int
    alpha: float = 0.1
    mavg: float | None = None
    rel_err: float | None = None
    period: int = 1
    bypass: bool = False

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ContractError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 <= self.n <= self.m:
            raise ContractError(f"bitlength {self.n} outside [0, {self.m}]")
        if self.period < 1:
            raise ContractError("period must be >= 1 batch")

    @property
    def width(self) -> int:
        """Width in effect; full precision while bypassed."""
        return self.m if self.bypass else self.n


def _check_loss(loss):
    if not math.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss}; freeze the controller and bypass")


def chop_update_ema(state: ChopState, loss: float) -> ChopState:
    """Fold ``loss`` into the moving average (the first loss seeds it)."""
    _check_loss(loss)
    if state.mavg is None:
        return replace(state, mavg=float(loss))
    return replace(state, mavg=state.mavg + state.alpha * (loss - state.mavg))


def chop_epsilon(state: ChopState, loss: float | None = None) -> float:
    """Threshold for the current period; ``inf`` until a deviation has been seen."""
    if state.mavg is None or state.rel_err is None:
        return math.inf
    if state.mavg <= 0:
        raise ContractError(f"moving-average loss {state.mavg} <= 0; relative error undefined")
    return state.mavg * state.rel_err


def chop_decide(state: ChopState, loss: float, eps: float | None = None) -> int:
    """Next bitlength given this period's loss (average not yet updated)."""
    _check_loss(loss)
    if state.mavg is None:
        return state.n
    if eps is None:
        eps = chop_epsilon(state, loss)
    if state.mavg > loss + eps:
        n = state.n - 1
    elif state.mavg < loss - eps:
        n = state.n + 1
    else:
        n = state.n
    return min(max(n, 0), state.m)


def _update_rel_err(state: ChopState, loss: float) -> ChopState:
    if state.mavg is None:
        return state
    if state.mavg <= 0:
        raise ContractError(f"moving-average loss {state.mavg} <= 0; relative error undefined")
    dev = abs(loss - state.mavg) / state.mavg
    if state.rel_err is None:
        return replace(state, rel_err=dev)
    return replace(state, rel_err=state.rel_err + state.alpha * (dev - state.rel_err))


def chop_step(state: ChopState, loss: float) -> ChopState:
    """One full period: decide, then update the deviation statistic and EMA."""
    n = chop_decide(state, loss)
    state = _update_rel_err(state, loss)
    state = chop_update_ema(state, loss)
    return replace(state, n=n)


class BitChop:
    """Stateful wrapper: one :meth:`observe` call per batch.

    Periods longer than one batch average the batch losses of the period.
    During a learning-rate change window (the batch of the change plus
    ``cooldown`` further batches) the controller reports full width and
    ignores losses; its state resumes untouched afterwards.
    """

    def __init__(self, m: int, alpha: float = 0.1, period: int = 1, cooldown: int = 100, n0=None):
        if cooldown < 0:
            raise ContractError("cooldown must be >= 0")
        self.state = ChopState(n=m if n0 is None else n0, m=m, alpha=alpha, period=period)
        self.cooldown = cooldown
        self._bypass_left = 0
        self._acc = []
        self.history = []

    @property
    def width(self) -> int:
        return self.state.width

    @property
    def bypassed(self) -> bool:
        return self.state.bypass

    def notify_lr_change(self) -> None:
        self._bypass_left = self.cooldown + 1
        self._acc = []
        self.state = replace(self.state, bypass=True)

    def observe(self, loss: float) -> int:
        """Write one batch loss to the loss register; returns the next width."""
        _check_loss(loss)
        if self._bypass_left > 0:
            self._bypass_left -= 1
            self.history.append((self.state.m, True))
            if self._bypass_left == 0:
                self.state = replace(self.state, bypass=False)
            return self.width
        self._acc.append(float(loss))
        if len(self._acc) >= self.state.period:
            period_loss = sum(self._acc) / len(self._acc)
            self._acc = []
            self.state = chop_step(self.state, period_loss)
        self.history.append((self.state.n, False))
        return self.width


def write_width_log(path, rows) -> None:
    """CSV of ``(epoch, batch, width, bypass)`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("epoch", "batch", "width", "bypass"))
        w.writerows(rows)
