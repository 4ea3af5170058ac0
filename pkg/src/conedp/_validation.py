import numpy as np


def as_points(points, dim=None, *, name="points", allow_empty=False):
    """Coerce input to a float array of shape (n, dim)."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        if arr.size == 0:
            arr = arr.reshape(0, dim if dim is not None else 0)
        elif dim is not None and arr.size == dim:
            arr = arr.reshape(1, dim)
        elif dim == 1:
            arr = arr.reshape(-1, 1)
        else:
            arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim and arr.shape[0] > 0:
        raise ValueError(f"{name} has dimension {arr.shape[1]}, expected {dim}")
    if arr.shape[0] == 0 and not allow_empty:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_vector(v, dim=None, *, name="vector"):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if dim is not None and arr.size != dim:
        raise ValueError(f"{name} has dimension {arr.size}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
