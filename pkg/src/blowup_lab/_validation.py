"""Small argument checks used across the package.

These follow the spirit of ``sklearn.utils.validation``: each helper either
returns a normalized value or raises with a message naming the argument.
"""

import numbers
from fractions import Fraction

import numpy as np

from .exceptions import ConfigError, DomainError


def check_scalar(x, name, *, lower=None, upper=None, strict_lower=False,
                 strict_upper=False, exc=DomainError):
    """Validate a finite real scalar against optional bounds and return it."""
    if isinstance(x, bool) or not isinstance(x, (numbers.Real, Fraction)):
        raise exc(f"{name} must be a real number, got {type(x).__name__}")
    if not np.isfinite(float(x)):
        raise exc(f"{name} must be finite, got {x}")
    if lower is not None:
        if strict_lower and not x > lower:
            raise exc(f"{name} must be > {lower}, got {x}")
        if not strict_lower and not x >= lower:
            raise exc(f"{name} must be >= {lower}, got {x}")
    if upper is not None:
        if strict_upper and not x < upper:
            raise exc(f"{name} must be < {upper}, got {x}")
        if not strict_upper and not x <= upper:
            raise exc(f"{name} must be <= {upper}, got {x}")
    return x


def check_int(x, name, *, lower=None, exc=DomainError):
    if isinstance(x, bool) or not isinstance(x, numbers.Integral):
        raise exc(f"{name} must be an integer, got {x!r}")
    if lower is not None and x < lower:
        raise exc(f"{name} must be >= {lower}, got {x}")
    return int(x)


def as_float_array(x, name, *, positive=False, nonnegative=False):
    """Convert ``x`` to a float ndarray, rejecting non-finite entries.

    Returns ``(array, was_scalar)`` so callers can hand back the same shape.
    """
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    if positive and np.any(arr <= 0):
        raise DomainError(f"{name} must be > 0")
    if nonnegative and np.any(arr < 0):
        raise DomainError(f"{name} must be >= 0")
    return np.atleast_1d(arr), scalar


def unwrap(values, scalar):
    return float(values[0]) if scalar else values


def check_monotone_times(times, name="times", exc=ConfigError):
    t = np.asarray(times, dtype=float)
    if t.ndim != 1:
        raise exc(f"{name} must be one-dimensional")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise exc(f"{name} must be strictly increasing")
    return t


def first_persistent_index(mask, persistence=1):
    """Smallest index ``k`` such that ``mask[k:]`` is all true.

    Returns ``None`` when the mask does not end with at least
    ``persistence`` consecutive true entries.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0 or not mask[-1]:
        return None
    false_idx = np.flatnonzero(~mask)
    k = 0 if false_idx.size == 0 else int(false_idx[-1]) + 1
    if mask.size - k < persistence:
        return None
    return k
