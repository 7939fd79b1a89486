"""Small helpers shared across modules: labelled RNG streams and input checks."""

from __future__ import annotations

import zlib
from numbers import Integral, Real

import numpy as np


def derive_rng(seed: int, label: str, worker: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for ``label`` derived from one master seed."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode("utf-8")), int(worker)])


def check_positive(name: str, value, integer: bool = False):
    kind = Integral if integer else Real
    if not isinstance(value, kind) or isinstance(value, bool) or not value > 0:
        raise ValueError(f"{name} must be a positive {'integer' if integer else 'number'}, got {value!r}")
    return value


def check_non_negative_int(name: str, value):
    if not isinstance(value, Integral) or isinstance(value, bool) or value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return value


def check_choice(name: str, value, choices):
    if value not in choices:
        raise ValueError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value


def check_rows(rows, width: int, name: str = "triples") -> np.ndarray:
    """Coerce an index array to int64 with shape ``(n, width)``."""
    arr = np.asarray(rows)
    if arr.ndim == 1 and arr.size == width:
        arr = arr.reshape(1, width)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ValueError(f"{name} must have shape (n, {width}), got {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError(f"{name} must contain integer ids")
    return arr.astype(np.int64, copy=False)


def check_scores(scores, name: str = "scores") -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
