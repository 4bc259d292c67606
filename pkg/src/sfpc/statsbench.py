"""Synthetic exponent distributions, a brute-force size oracle, and ratio sweeps."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import gecko
from .errors import ContractError
from .floatcore import get_format, make_rng

KINDS = ("uniform", "gaussian-exponent", "trace")
LEGAL_WIDTHS = (0, 1, 2, 3, 4, 5, 6, 8)


@dataclass(frozen=True)
class SyntheticDistribution:
    kind: str
    size: int = 64 * 1024
    seed: int = 0
    sigma: float = 2.0
    mean: float = 127.0
    trace_path: str | None = None
    tensor: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.size < 1:
            raise ContractError("size must be >= 1")
        if self.kind == "trace" and not self.trace_path:
            raise ContractError("trace replay needs trace_path")

    @property
    def label(self) -> str:
        if self.kind == "gaussian-exponent":
            return f"gaussian(sigma={self.sigma:g})"
        if self.kind == "trace":
            return f"trace({self.tensor or 'all'})"
        return self.kind

    def exponents(self) -> np.ndarray:
        """Exponent fields in ``[0, 255]`` as int64."""
        if self.kind == "trace":
            return trace_exponents(self.trace_path, self.tensor)
        rng = make_rng(self.seed)
        if self.kind == "uniform":
            return rng.integers(0, 256, self.size).astype(np.int64)
        e = np.rint(rng.normal(self.mean, self.sigma, self.size))
        return np.clip(e, 0, 255).astype(np.int64)


def trace_exponents(path, tensor=None, epoch_min=None) -> np.ndarray:
    """Exponent fields of every stored tensor captured in a training trace."""
    from .trainer import load_trace, trace_tensors

    trace = load_trace(path)
    if "raw" not in trace:
        raise ContractError(f"{path}: trace has no raw values (train with trace_raw = true)")
    fmt = get_format(str(trace["format"]))
    parts = []
    for rec, bits in trace_tensors(trace):
        if tensor is not None and rec["tensor"] != tensor:
            continue
        if epoch_min is not None and rec["epoch"] < epoch_min:
            continue
        parts.append(((bits.astype(np.int64) >> fmt.m) & 0xFF))
    if not parts:
        raise ContractError(f"{path}: no matching tensors")
    return np.concatenate(parts)


def _sign_magnitude_fits(delta: int, width: int) -> bool:
    if width == 0:
        return delta == 0
    return abs(delta) < (1 << width)


def oracle_encode_size(group, variant="delta", bias: int = 127) -> int:
    """Minimal encoded size by trying every legal width per row.

    ``group`` is an 8x8 nested sequence (DeltaBase) or 8 values
    (FixedBias) of plain exponent integers. Rows are independent, so the
    minimum over all width assignments is the sum of per-row minima.
    """
    variant = gecko.get_variant(variant)
    if variant is gecko.Variant.FIXED_BIAS:
        vals = [int(v) for v in np.ravel(group)]
        if len(vals) != 8:
            raise ContractError("FixedBias oracle takes 8 exponents")
        rows = [[v - bias for v in vals]]
        fixed = 0
    else:
        mat = [[int(v) for v in row] for row in np.asarray(group).reshape(8, 8)]
        base = mat[0]
        rows = [[mat[r][c] - base[c] for c in range(8)] for r in range(1, 8)]
        fixed = 8 * 8
    total = fixed
    for deltas in rows:
        best = None
        for w in LEGAL_WIDTHS:
            if all(_sign_magnitude_fits(d, w) for d in deltas):
                size = 3 + (8 * (w + 1) if w else 0)
                best = size if best is None else min(best, size)
        if best is None:
            raise ContractError(f"row deltas {deltas} exceed every legal width")
        total += best
    return total


def oracle_tensor_size(exponents, variant="delta", bias: int = 127) -> int:
    """Oracle size of a whole sequence, padded exactly as the encoder pads."""
    variant = gecko.get_variant(variant)
    return sum(
        oracle_encode_size(g.exponents, variant, bias)
        for g in gecko.split_groups(exponents, variant, bias)
    )


def stored_field_bits(exponents, variant="delta", bias: int = 127) -> np.ndarray:
    """Exponent bits each real value occupies in its container (delta rows only
    for DeltaBase; base rows are the fixed 8)."""
    exps = np.asarray(exponents, dtype=np.int64)
    codes, n_groups, _ = gecko.row_width_codes(exps, variant, bias)
    bits = gecko.field_bits(gecko.code_width(codes))
    if gecko.get_variant(variant) is gecko.Variant.DELTA_BASE:
        per = np.empty((n_groups, 8, 8), dtype=np.int64)
        per[:, 0, :] = 8
        per[:, 1:, :] = bits[:, :, None]
    else:
        per = np.repeat(bits, 8, axis=1)
    return per.reshape(-1)[: exps.size]


def bitlength_cdf(exponents, variant="delta", bias: int = 127, max_bits: int = 9) -> np.ndarray:
    """Fraction of values whose stored exponent field is at most ``b`` bits, b = 0..max_bits."""
    bits = stored_field_bits(exponents, variant, bias)
    counts = np.bincount(bits, minlength=max_bits + 1)[: max_bits + 1]
    return np.cumsum(counts) / bits.size


def ratio_sweep(dists, variant="delta", bias: int = 127) -> list:
    """One row per distribution: label, sigma, values, ratio and CDF."""
    rows = []
    for dist in dists:
        exps = dist.exponents()
        acc = gecko.tensor_account(exps, variant, bias)
        rows.append({
            "source": dist.label,
            "sigma": dist.sigma if dist.kind == "gaussian-exponent" else float("nan"),
            "values": int(exps.size),
            "ratio": acc.ratio,
            "cdf": bitlength_cdf(exps, variant, bias).tolist(),
        })
    return rows


def default_sweep(size=64 * 1024, seed=0):
    return [SyntheticDistribution("uniform", size, seed)] + [
        SyntheticDistribution("gaussian-exponent", size, seed, sigma=s) for s in (1, 2, 4, 8)
    ]


def write_sweep(path, rows) -> None:
    """CSV columns: source, sigma, values, ratio, cdf_0 .. cdf_9."""
    n_cdf = len(rows[0]["cdf"]) if rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("source", "sigma", "values", "ratio", *(f"cdf_{b}" for b in range(n_cdf))))
        for r in rows:
            w.writerow((r["source"], r["sigma"], r["values"], repr(r["ratio"]),
                        *(repr(c) for c in r["cdf"])))
