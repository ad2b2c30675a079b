"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_vector",
    "check_matrix",
    "check_positive",
    "check_unit_interval",
    "check_same_dim",
]


def check_vector(x, name="x", dim=None):
    """Coerce ``x`` to a finite 1-D float array, optionally of length ``dim``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    return arr


def check_matrix(x, name="X"):
    """Coerce ``x`` to a finite 2-D float array (rows are points)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def check_unit_interval(value, name, open_left=True, closed_right=True):
    value = float(value)
    lo_ok = value > 0.0 if open_left else value >= 0.0
    hi_ok = value <= 1.0 if closed_right else value < 1.0
    if not (lo_ok and hi_ok):
        raise ValueError(f"{name} must lie in the unit interval, got {value}")
    return value


def check_same_dim(a, b, name_a="theta", name_b="theta_prime"):
    a = check_vector(a, name_a)
    b = check_vector(b, name_b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(
            f"{name_a} and {name_b} have mismatched dimensions "
            f"({a.shape[0]} vs {b.shape[0]})"
        )
    return a, b
