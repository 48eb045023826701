"""Small input-validation helpers shared across the package."""

import numbers

import numpy as np


def check_positive(name, value):
    """Return ``value`` as float, raising ValueError unless it is finite and > 0."""
    v = check_finite(name, value)
    if v <= 0.0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return v


def check_finite(name, value):
    """Return ``value`` as float, raising ValueError unless it is a finite real."""
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ValueError(f"{name} must be a real number, got {value!r}")
    v = float(value)
    if not np.isfinite(v):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return v


def check_in_open_interval(name, value, lo, hi):
    """Return ``value`` as float, raising ValueError unless lo < value < hi."""
    v = check_finite(name, value)
    if not (lo < v < hi):
        raise ValueError(f"{name} must lie strictly in ({lo}, {hi}), got {value!r}")
    return v


def as_float_array(name, values):
    """Return a 1-d float array, raising ValueError for empty or non-finite input."""
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d sequence of reals")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must contain only finite values")
    return arr
