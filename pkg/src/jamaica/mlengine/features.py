from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch, NonFiniteFeature


def as_matrix(batch, dimension: int) -> np.ndarray:
    """Coerce a batch of feature vectors (or scalars) to a finite (n, dimension) array."""
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 1 and dimension == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or (arr.shape[0] and arr.shape[1] != dimension):
        raise DimensionMismatch(f"expected vectors of length {dimension}, got shape {arr.shape}")
    if arr.shape[0] == 0:
        arr = arr.reshape(0, dimension)
    if not np.isfinite(arr).all():
        raise NonFiniteFeature("feature vectors must be finite")
    return np.ascontiguousarray(arr)


def as_vector(p, dimension: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(p, dtype=np.float64))
    if arr.ndim != 1 or arr.shape[0] != dimension:
        raise DimensionMismatch(f"expected a vector of length {dimension}, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteFeature("feature vectors must be finite")
    return arr
