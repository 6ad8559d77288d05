"""Input validation helpers shared by the solvers and estimators."""

import numbers

import numpy as np


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver fails to reach its tolerance."""


def check_lattice_size(N, minimum=2):
    if not isinstance(N, numbers.Integral) or isinstance(N, bool):
        raise TypeError(f"N must be an integer, got {type(N).__name__}")
    if N < minimum:
        raise ValueError(f"N must be >= {minimum}, got {N}")
    return int(N)


def check_profile(values, N=None, *, bounded=True, name="profile"):
    """Return ``values`` as a float array of length N+2.

    Parameters
    ----------
    values : array_like
        Densities on the extended lattice 0..N+1.
    N : int, optional
        Expected channel size. Inferred from the length when omitted.
    bounded : bool
        Require every entry to lie in [0, 1].
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if N is not None and arr.shape[0] != N + 2:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected N+2={N + 2}")
    if arr.shape[0] < 4:
        raise ValueError(f"{name} needs at least 4 entries (N >= 2)")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if bounded and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    return arr


def check_time_grid(times, *, name="times", strictly_positive=False, increasing=True):
    arr = np.atleast_1d(np.asarray(times, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if strictly_positive and arr.min() <= 0.0:
        raise ValueError(f"{name} must be > 0")
    if not strictly_positive and arr.min() < 0.0:
        raise ValueError(f"{name} must be >= 0")
    if increasing and np.any(np.diff(arr) < 0):
        raise ValueError(f"{name} must be nondecreasing")
    return arr


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive number, got {value}")
    return value


def check_unit_interval(value, name):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value
