"""Pure-Python (numpy) twin of the compiled ``_lofcore`` kernels."""

from __future__ import annotations

import numpy as np

_CHUNK = 256


def knn(ref: np.ndarray, queries: np.ndarray, k: int, exclude_self: bool = False):
    m = queries.shape[0]
    out_d = np.empty((m, k), dtype=np.float64)
    out_i = np.empty((m, k), dtype=np.intp)
    for lo in range(0, m, _CHUNK):
        hi = min(lo + _CHUNK, m)
        diff = queries[lo:hi, None, :] - ref[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        if exclude_self:
            rows = np.arange(hi - lo)
            dist[rows, rows + lo] = np.inf
        # stable sort: equal distances keep ascending reference index
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        out_i[lo:hi] = order
        out_d[lo:hi] = np.take_along_axis(dist, order, axis=1)
    return out_d, out_i


def fit(ref: np.ndarray, k: int, eps: float):
    dist, idx = knn(ref, ref, k, exclude_self=True)
    kdist = dist[:, k - 1].copy()
    reach = np.maximum(dist, kdist[idx])
    lrd = 1.0 / np.maximum(reach.mean(axis=1), eps)
    return kdist, lrd


def score(ref, kdist, lrd, queries, k: int, eps: float):
    dist, idx = knn(ref, queries, k)
    reach = np.maximum(dist, kdist[idx]).mean(axis=1)
    return lrd[idx].mean(axis=1) * np.maximum(reach, eps)
