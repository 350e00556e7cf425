"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import math

import numpy as np
from sklearn.utils.validation import check_array


def check_hour(value, name: str) -> int:
    if not isinstance(value, (int, np.integer)) or not 0 <= value <= 24:
        raise ValueError(f"{name} must be an integer hour in [0, 24], got {value!r}")
    return int(value)


def check_weekdays(days) -> frozenset:
    days = frozenset(int(d) for d in days)
    if not days:
        raise ValueError("anchor weekday set must not be empty")
    if not days <= set(range(7)):
        raise ValueError(f"weekdays must be in 0..6 (Monday=0), got {sorted(days)}")
    return days


def check_bbox(bbox) -> tuple[float, float, float, float]:
    """Validate ``(lon_min, lat_min, lon_max, lat_max)`` in WGS84 degrees."""
    if isinstance(bbox, str):
        bbox = bbox.split(",")
    try:
        lon0, lat0, lon1, lat1 = (float(v) for v in bbox)
    except (TypeError, ValueError):
        raise ValueError(f"bbox must be four numbers lonmin,latmin,lonmax,latmax, got {bbox!r}") from None
    if not all(math.isfinite(v) for v in (lon0, lat0, lon1, lat1)):
        raise ValueError("bbox coordinates must be finite")
    if not (-180 <= lon0 <= 180 and -180 <= lon1 <= 180 and -90 <= lat0 <= 90 and -90 <= lat1 <= 90):
        raise ValueError("bbox outside world bounds")
    if not (lon0 < lon1 and lat0 < lat1):
        raise ValueError("bbox needs lon_min < lon_max and lat_min < lat_max")
    return lon0, lat0, lon1, lat1


def check_vector(values, name: str = "values", min_length: int = 1) -> np.ndarray:
    arr = check_array(np.asarray(values, dtype=float).reshape(-1, 1), ensure_min_samples=min_length,
                      input_name=name)
    return arr.ravel()


def check_weights(W, n: int | None = None, row_standardized: bool = True) -> np.ndarray:
    """Dense weights as a float array with zero diagonal; rows sum to 1 or 0 if standardized."""
    if hasattr(W, "to_dense"):
        W = W.to_dense()
    W = check_array(np.asarray(W, dtype=float), input_name="W")
    if W.shape[0] != W.shape[1]:
        raise ValueError(f"weights must be square, got {W.shape}")
    if n is not None and W.shape[0] != n:
        raise ValueError(f"weights have {W.shape[0]} units, data has {n}")
    if np.any(np.diag(W) != 0):
        raise ValueError("weights must have a zero diagonal")
    if np.any(W < 0):
        raise ValueError("weights must be nonnegative")
    if row_standardized:
        rows = W.sum(axis=1)
        bad = (rows != 0) & (np.abs(rows - 1.0) > 1e-12)
        if np.any(bad):
            raise ValueError(f"weights are not row-standardized (row {int(np.flatnonzero(bad)[0])})")
    return W
