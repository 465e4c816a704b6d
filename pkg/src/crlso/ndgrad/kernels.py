"""Hot inner loops, JIT-compiled with numba when available.

Set ``CRLSO_DISABLE_NUMBA=1`` to force the pure-numpy implementations; both
paths return identical results up to floating-point summation order.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

USE_NUMBA = numba is not None and os.environ.get("CRLSO_DISABLE_NUMBA", "0") in ("", "0")


def _segment_sum_numpy(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n,) + values.shape[1:], dtype=values.dtype)
    np.add.at(out, index, values)
    return out


def _concordance_numpy(x: np.ndarray, y: np.ndarray, block: int = 1024):
    n = x.shape[0]
    conc = disc = tie_x = tie_y = 0
    for start in range(0, n, block):
        stop = min(start + block, n)
        dx = np.sign(x[start:stop, None] - x[None, :])
        dy = np.sign(y[start:stop, None] - y[None, :])
        # keep only pairs (i, j) with j > i
        mask = np.arange(n)[None, :] > np.arange(start, stop)[:, None]
        dx = dx[mask]
        dy = dy[mask]
        prod = dx * dy
        conc += int(np.count_nonzero(prod > 0))
        disc += int(np.count_nonzero(prod < 0))
        tie_x += int(np.count_nonzero((dx == 0) & (dy != 0)))
        tie_y += int(np.count_nonzero((dy == 0) & (dx != 0)))
    return conc, disc, tie_x, tie_y


if numba is not None:

    @numba.njit(cache=True)
    def _segment_sum_jit(values, index, n):
        out = np.zeros((n, values.shape[1]), dtype=values.dtype)
        for i in range(values.shape[0]):
            r = index[i]
            for j in range(values.shape[1]):
                out[r, j] += values[i, j]
        return out

    @numba.njit(cache=True)
    def _concordance_jit(x, y):
        n = x.shape[0]
        conc = 0
        disc = 0
        tie_x = 0
        tie_y = 0
        for i in range(n):
            for j in range(i + 1, n):
                dx = x[i] - x[j]
                dy = y[i] - y[j]
                if dx == 0.0 and dy == 0.0:
                    continue
                if dx == 0.0:
                    tie_x += 1
                elif dy == 0.0:
                    tie_y += 1
                elif (dx > 0.0) == (dy > 0.0):
                    conc += 1
                else:
                    disc += 1
        return conc, disc, tie_x, tie_y


def segment_sum(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    """Sum rows of ``values`` into ``n`` buckets given by ``index``."""
    index = np.asarray(index, dtype=np.int64)
    if USE_NUMBA and values.ndim == 2 and values.dtype == np.float64:
        return _segment_sum_jit(np.ascontiguousarray(values), index, n)
    return _segment_sum_numpy(values, index, n)


def concordance_counts(x: np.ndarray, y: np.ndarray) -> tuple[int, int, int, int]:
    """Return (concordant, discordant, ties only in x, ties only in y) pair counts."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if USE_NUMBA:
        c, d, tx, ty = _concordance_jit(x, y)
        return int(c), int(d), int(tx), int(ty)
    return _concordance_numpy(x, y)
