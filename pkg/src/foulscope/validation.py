"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

import numbers

import numpy as np

from .errors import DimMismatch, LengthMismatch, NonFinite, ZeroVector

ZERO_NORM = 1e-12
# Rows already this close to unit norm are kept verbatim so float32 payloads
# survive a write/read cycle bit-for-bit.
UNIT_TOLERANCE = 1e-6


def as_float_matrix(a, name: str = "array", ndim: int = 2) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return arr


def unit_rows(a, name: str = "vectors") -> np.ndarray:
    """Return a read-only float64 copy of ``a`` with every row scaled to unit norm."""
    arr = as_float_matrix(a, name)
    norms = np.sqrt(np.einsum("ij,ij->i", arr, arr))
    if np.any(norms <= ZERO_NORM):
        bad = int(np.flatnonzero(norms <= ZERO_NORM)[0])
        raise ZeroVector(f"{name} row {bad} has (near) zero norm")
    out = arr.copy()
    rescale = np.abs(norms - 1.0) > UNIT_TOLERANCE
    if np.any(rescale):
        out[rescale] /= norms[rescale, None]
    out.setflags(write=False)
    return out


def check_fraction(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not 0.0 <= float(value) <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not float(value) > 0 or not np.isfinite(value):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_count(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise NonFinite("scores contain NaN or Inf")
    if y.size and not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary (0/1)")
    return s, y.astype(bool)
