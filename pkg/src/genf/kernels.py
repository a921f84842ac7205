"""Neighbor-count kernels for the KSG estimator.

Both backends return identical integer counts; the numba one is used when
available (see :mod:`genf._accel`).
"""
from __future__ import annotations

import numpy as np

from genf._accel import HAVE_NUMBA, njit


@njit(cache=True)
def _row_dist(at, i, out):
    # max-norm distance from point i to every point; ``at`` is (dim, n)
    out[:] = 0.0
    for d in range(at.shape[0]):
        c = at[d, i]
        for j in range(at.shape[1]):
            v = abs(at[d, j] - c)
            if v > out[j]:
                out[j] = v


@njit(cache=True)
def _ksg_counts_numba(x, y, k):
    n = x.shape[0]
    xt = np.ascontiguousarray(x.T)
    yt = np.ascontiguousarray(y.T)
    nx = np.zeros(n, dtype=np.int64)
    ny = np.zeros(n, dtype=np.int64)
    dx = np.empty(n)
    dy = np.empty(n)
    best = np.empty(k)  # k smallest joint distances, ascending
    for i in range(n):
        _row_dist(xt, i, dx)
        _row_dist(yt, i, dy)
        best[:] = np.inf
        for j in range(n):
            dz = max(dx[j], dy[j])
            if dz < best[k - 1] and j != i:
                p = k - 1
                while p > 0 and best[p - 1] > dz:
                    best[p] = best[p - 1]
                    p -= 1
                best[p] = dz
        eps = best[k - 1]
        cx = 0
        cy = 0
        for j in range(n):
            cx += dx[j] < eps
            cy += dy[j] < eps
        # the point itself sits at distance 0 and is inside only when eps > 0
        if eps > 0:
            cx -= 1
            cy -= 1
        nx[i] = cx
        ny[i] = cy
    return nx, ny


def _ksg_counts_numpy(x, y, k, block=512):
    n = x.shape[0]
    nx = np.empty(n, dtype=np.int64)
    ny = np.empty(n, dtype=np.int64)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        dx = np.abs(x[lo:hi, None, :] - x[None, :, :]).max(axis=2)
        dy = np.abs(y[lo:hi, None, :] - y[None, :, :]).max(axis=2)
        dz = np.maximum(dx, dy)
        rows = np.arange(hi - lo)
        dz[rows, rows + lo] = np.inf
        eps = np.partition(dz, k - 1, axis=1)[:, k - 1]
        # self-distance is 0 and counts only when eps > 0
        self_hit = (eps > 0).astype(np.int64)
        nx[lo:hi] = (dx < eps[:, None]).sum(axis=1) - self_hit
        ny[lo:hi] = (dy < eps[:, None]).sum(axis=1) - self_hit
    return nx, ny


def ksg_counts(x: np.ndarray, y: np.ndarray, k: int, backend: str | None = None):
    """Marginal neighbor counts n_x, n_y inside each point's joint k-NN radius (max-norm)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    use = backend or ("numba" if HAVE_NUMBA else "numpy")
    if use == "numba" and HAVE_NUMBA:
        return _ksg_counts_numba(x, y, k)
    return _ksg_counts_numpy(x, y, k)
