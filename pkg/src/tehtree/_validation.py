"""Small argument checks reused across modules."""

import numbers

import numpy as np

from .exceptions import ValidationError


def check_probability(value, name, *, low_open=True, high_open=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValidationError(f"{name} must be a finite real number, got {value!r}")
    lo_bad = value <= 0 if low_open else value < 0
    hi_bad = value >= 1 if high_open else value > 1
    if lo_bad or hi_bad:
        lo = "(" if low_open else "["
        hi = ")" if high_open else "]"
        raise ValidationError(f"{name} must lie in {lo}0, 1{hi}, got {value!r}")
    return float(value)


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_matrix(x, name="x", n_features=None):
    """Return ``x`` as a finite 2-D float array, optionally checking its width."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if n_features is not None and arr.size == n_features else arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if n_features is not None and arr.shape[1] != n_features:
        raise ValidationError(
            f"{name} has {arr.shape[1]} columns but the model was fit with {n_features}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_vector(v, name, length=None):
    arr = np.asarray(v, dtype=float).ravel()
    if length is not None and arr.shape[0] != length:
        raise ValidationError(f"{name} has length {arr.shape[0]}, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr
