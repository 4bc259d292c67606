"""Learned per-tensor mantissa bitlengths (Quantum Mantissa).

Each stashed tensor owns one real-valued bitlength ``n``. In the forward
pass the tensor is truncated to ``floor(n)`` or ``floor(n) + 1`` mantissa
bits (picked at random with probability set by the fractional part, one
draw per tensor per batch). The training loss gets a footprint penalty
``gamma * sum(lambda_i * n_i)`` and ``n`` follows its gradient.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .floatcore import FP32, FloatFormat, decompose, quantize_mantissa, value_scale


@dataclass
class BitlengthParam:
    tensor_id: str
    kind: str  # "weights" or "activations"
    n: float
    lam: float = 1.0
    m: int = 23
    frozen: bool = False

    def __post_init__(self):
        if self.kind not in ("weights", "activations"):
            raise ContractError(f"kind must be 'weights' or 'activations', got {self.kind!r}")
        if self.lam < 0:
            raise ContractError("footprint weight must be non-negative")
        self.n = float(min(max(self.n, 0.0), self.m))

    @property
    def width(self) -> int:
        """Deterministic width: only meaningful once frozen."""
        return int(math.ceil(self.n))


@dataclass
class QMConfig:
    gamma_schedule: list = field(default_factory=lambda: [(0, 0.1)])
    finalize_epoch: int | None = None
    bit_lr: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.gamma_schedule:
            raise ConfigError("gamma schedule must not be empty")
        sched = sorted((int(e), float(g)) for e, g in self.gamma_schedule)
        if sched[0][0] != 0:
            raise ConfigError("gamma schedule must start at epoch 0")
        if any(g < 0 for _, g in sched):
            raise ConfigError("gamma must be non-negative")
        if self.bit_lr <= 0:
            raise ConfigError("bitlength learning rate must be positive")
        self.gamma_schedule = sched

    def gamma(self, epoch: int) -> float:
        g = self.gamma_schedule[0][1]
        for start, value in self.gamma_schedule:
            if epoch >= start:
                g = value
        return g

    @classmethod
    def for_epochs(cls, epochs: int, **kwargs) -> "QMConfig":
        """Default three-phase schedule (0.1, 0.01, 0.001 at 0, 1/3, 2/3) and
        finalization over the last ninth of training."""
        if epochs < 1:
            raise ConfigError("epochs must be >= 1")
        kwargs.setdefault(
            "gamma_schedule", [(0, 0.1), (epochs // 3, 0.01), (2 * epochs // 3, 0.001)]
        )
        kwargs.setdefault("finalize_epoch", max(1, epochs - max(1, round(epochs / 9))))
        cfg = cls(**kwargs)
        if cfg.finalize_epoch is not None and cfg.finalize_epoch >= epochs:
            raise ConfigError("finalize_epoch must precede the last epoch")
        return cfg


def footprint_weights(sizes) -> list:
    """Footprint weights proportional to tensor size, normalized to sum to 1."""
    sizes = [float(s) for s in sizes]
    if any(s < 0 for s in sizes):
        raise ContractError("tensor sizes must be non-negative")
    total = sum(sizes)
    if total == 0:
        raise ContractError("at least one tensor must be non-empty")
    return [s / total for s in sizes]


def qm_loss(task_loss: float, params, gamma: float) -> float:
    """Task loss plus the weighted bitlength penalty."""
    if gamma < 0:
        raise ContractError("gamma must be non-negative")
    return task_loss + gamma * sum(p.lam * p.n for p in params)


def mantissa_step(bits, n_floor: int, fmt: FloatFormat = FP32) -> np.ndarray:
    """Value change from adding mantissa bit ``n_floor + 1`` to each value.

    That is ``value(Q(M, n+1)) - value(Q(M, n))`` with sign and exponent
    scaling applied; zero when ``n_floor >= m``.
    """
    if n_floor >= fmt.m:
        return np.zeros(np.shape(bits))
    sign, exp, man = decompose(np.asarray(bits, dtype=fmt.dtype), fmt)
    delta = quantize_mantissa(man, n_floor + 1, fmt).astype(np.int64) - quantize_mantissa(
        man, n_floor, fmt
    ).astype(np.int64)
    scale = value_scale(exp, fmt)
    return np.where(sign == 1, -1.0, 1.0) * delta * scale


def qm_gradient(param: BitlengthParam, grads, bits, gamma: float, fmt: FloatFormat = FP32) -> float:
    """dL/dn for one tensor.

    ``grads`` are loss gradients with respect to the quantized values and
    ``bits`` the tensor's unquantized bit patterns. The data term is
    ``sum(g * (value(Q(M, floor(n)+1)) - value(Q(M, floor(n)))))`` summed in
    a fixed (flattened) order; the penalty adds ``gamma * lambda``.
    """
    if param.frozen:
        return 0.0
    k = min(int(math.floor(param.n)), fmt.m)
    step = mantissa_step(bits, k, fmt)
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != step.shape:
        raise ContractError(f"gradient shape {g.shape} != tensor shape {step.shape}")
    data = float(np.dot(g.ravel(), step.ravel()))
    return data + gamma * param.lam


def qm_step(params, gradients, lr: float):
    """``n <- clip(n - lr * grad, 0, m)`` for every unfrozen parameter (in place)."""
    if lr <= 0:
        raise ContractError("learning rate must be positive")
    for p, g in zip(params, gradients, strict=True):
        if p.frozen:
            continue
        p.n = float(min(max(p.n - lr * g, 0.0), p.m))
    return params


def qm_finalize(params) -> list:
    """Round every bitlength up and freeze it; returns the integer widths."""
    widths = []
    for p in params:
        p.n = float(math.ceil(p.n))
        p.frozen = True
        widths.append(int(p.n))
    return widths


def weighted_mean_bits(params) -> float:
    total = sum(p.lam for p in params)
    return sum(p.lam * p.n for p in params) / total if total else float("nan")


class TrajectoryLog:
    """Rows of ``(epoch, batch, tensor_id, n, gamma)``."""

    header = ("epoch", "batch", "tensor_id", "n", "gamma")

    def __init__(self):
        self.rows = []

    def record(self, epoch, batch, params, gamma):
        for p in params:
            self.rows.append((epoch, batch, p.tensor_id, p.n, gamma))

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            for e, b, t, n, g in self.rows:
                w.writerow((e, b, t, repr(float(n)), repr(float(g))))
