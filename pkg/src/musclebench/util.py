"""Small shared helpers: deterministic seeds, index hashes, validation."""
from __future__ import annotations

import hashlib
from typing import Iterable, Sequence

import numpy as np

from .errors import FitError


def index_hash(indices: Iterable[int]) -> str:
    """Hex digest identifying a set of row indices (order-insensitive)."""
    payload = ",".join(str(int(i)) for i in sorted(int(i) for i in indices))
    return hashlib.sha256(payload.encode("ascii")).hexdigest()


def derive_seed(*parts) -> int:
    """Stable 32-bit seed derived from string/int parts.

    Used to give every (family, config, fold) task its own RNG stream so
    serial and parallel execution consume identical randomness.
    """
    payload = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def stable_fingerprint(config: dict) -> str:
    """Canonical one-line rendering of a config dict, key-sorted."""
    items = []
    for key in sorted(config):
        value = config[key]
        if isinstance(value, float):
            items.append(f"{key}={value!r}")
        else:
            items.append(f"{key}={value}")
    return "|".join(items)


def as_float_vector(y, name: str = "y") -> np.ndarray:
    arr = np.asarray(y, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def as_float_matrix(X, name: str = "X", *, allow_nan: bool = False) -> np.ndarray:
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not allow_nan and np.isnan(arr).any():
        raise ValueError(f"{name} contains missing values; impute before this step")
    return arr


def check_same_rows(X: np.ndarray, y: np.ndarray) -> None:
    if X.shape[0] != y.shape[0]:
        raise ValueError(
            f"row mismatch: X has {X.shape[0]} rows but y has {y.shape[0]}"
        )


def ensure_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise FitError(
            f"{type(estimator).__name__} is not fitted (missing {attribute!r}); call fit first"
        )


def format_float(value: float) -> str:
    """Shortest round-trip decimal text for a float; deterministic across runs."""
    if isinstance(value, float) and np.isnan(value):
        return "nan"
    return repr(float(value))


def seeded_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def sorted_tuple(values: Sequence[int]) -> tuple[int, ...]:
    return tuple(sorted(int(v) for v in values))
