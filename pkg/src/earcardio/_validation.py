"""Input validation helpers shared by the estimators and functional API."""

import numpy as np

from .exceptions import EmptySignal, ShapeMismatch

CYCLE_LEN = 400


def as_1d(x, name="x", allow_empty=False):
    """Return ``x`` as a contiguous float64 1-D array, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0 and not allow_empty:
        raise EmptySignal(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return np.ascontiguousarray(arr)


def as_cycles(X, length=CYCLE_LEN, name="X"):
    """Coerce ``X`` to an ``(n_cycles, length)`` float64 matrix.

    Accepts a single cycle, a list of cycles, a 2-D array, a
    ``(n, 1, length)`` tensor-shaped array, or a list of
    :class:`~earcardio.segmentation.CardiacCycle`.
    """
    if isinstance(X, (list, tuple)) and X and hasattr(X[0], "samples"):
        X = [c.samples for c in X]
    elif hasattr(X, "samples") and not isinstance(X, np.ndarray):
        X = X.samples
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    elif arr.ndim == 3 and arr.shape[1] == 1:
        arr = arr[:, 0, :]
    if arr.ndim != 2 or (length is not None and arr.shape[1] != length):
        raise ShapeMismatch(
            f"{name} must have shape (n, {length}), got {np.shape(X)}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_positive(value, name):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value
