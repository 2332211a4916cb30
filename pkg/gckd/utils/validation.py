"""Validation helpers for vectors, matrices and config values."""
from typing import Optional

import numpy as np

from gckd.errors import ParameterError, ShapeError


def ensure_vector(value, dim: Optional[int] = None, name: str = "vector") -> np.ndarray:
    """Return ``value`` as a finite float64 1-D array.

    - If ``dim`` is given, the length must match it.
    - NaN/Inf entries are rejected.
    """
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ShapeError(f"{name} must have length {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} has non-finite entries")
    return arr


def ensure_unit_rows(arr: np.ndarray, tol: float = 1e-9, name: str = "features") -> None:
    if arr.shape[0] == 0:
        return
    norms = np.linalg.norm(arr, axis=1)
    if not np.all(np.abs(norms - 1.0) <= tol):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ParameterError(f"{name} rows must be unit norm (worst deviation {worst:.3e})")


def ensure_positive(value: float, name: str) -> float:
    if not value > 0:
        raise ParameterError(f"{name} must be positive, got {value}")
    return float(value)


def ensure_in_range(value: float, low: float, high: float, name: str, *, closed: bool = True) -> float:
    """Check ``low <= value <= high`` (or the open interval when ``closed`` is False)."""
    inside = low <= value <= high if closed else low < value < high
    if not inside:
        bracket = "[]" if closed else "()"
        raise ParameterError(f"{name} must lie in {bracket[0]}{low}, {high}{bracket[1]}, got {value}")
    return float(value)
