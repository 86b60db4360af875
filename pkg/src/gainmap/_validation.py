"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

#: Column order of a sample array. Each row is one measurement:
#: base-station x/y, measurement location x/y, channel gain in dB.
SAMPLE_COLUMNS = ("bs_x", "bs_y", "x", "y", "gain_db")


def as_samples(v, *, min_rows: int = 1) -> np.ndarray:
    """Validate and return a float64 sample array of shape (M, 5)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != len(SAMPLE_COLUMNS):
        raise ValueError(
            f"expected samples of shape (M, {len(SAMPLE_COLUMNS)}), got {arr.shape}"
        )
    if arr.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} sample(s), got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ValueError("samples contain non-finite values")
    return arr


def as_locations(x) -> np.ndarray:
    """Validate and return a float64 location array of shape (N, 2)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1 and arr.shape == (2,):
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected locations of shape (N, 2), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("locations contain non-finite values")
    return arr


def require_positive(name: str, value: float) -> float:
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value
