"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .floatcore import get_format


def check_width(width, fmt) -> int:
    fmt = get_format(fmt)
    if isinstance(width, bool) or not isinstance(width, (int, np.integer)):
        raise ContractError(f"mantissa width must be an integer, got {width!r}")
    if not 0 <= width <= fmt.m:
        raise ContractError(f"mantissa width {width} outside [0, {fmt.m}] for {fmt.name}")
    return int(width)


def check_float_array(X, *, ndim=None, allow_nonfinite=False) -> np.ndarray:
    """Real-valued array as float64; rejects bit-pattern dtypes and non-finite data."""
    arr = np.asarray(X)
    if arr.dtype.kind not in "fiu":
        raise ContractError(f"expected numeric data, got dtype {arr.dtype}")
    arr = arr.astype(np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ContractError(f"expected a {ndim}-d array, got shape {arr.shape}")
    if arr.size == 0:
        raise ContractError("empty input")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise ContractError("input contains NaN or infinity")
    return arr


def check_labels(y, n_samples) -> tuple:
    """Map labels to ``0..k-1``; returns ``(encoded, classes)``."""
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ContractError(f"expected {n_samples} labels, got shape {y.shape}")
    classes, encoded = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise ContractError("need at least two classes")
    return encoded.astype(np.int64), classes
