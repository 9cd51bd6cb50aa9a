"""Blocked search for centroid pairs that satisfy the merge predicate.

Distances come from a Gram matrix of unit rows. Any pair within ``BORDER`` of
the criterion is re-decided with the scalar :func:`core.distance` formula, so
decisions never depend on BLAS blocking or thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache

import numpy as np
from threadpoolctl import threadpool_limits

from .core import DEGENERATE_DISTANCE, ZERO_NORM, distance, normalize_rows, unit_step

BORDER = 1e-9
BLOCK = 1024


def merge_predicate(c_p, c_q, sigma_drm: float) -> int:
    """1 when two centroids lie within ``sigma_drm`` (degenerate centroids never merge)."""
    if np.linalg.norm(c_p) < ZERO_NORM or np.linalg.norm(c_q) < ZERO_NORM:
        return unit_step(sigma_drm - DEGENERATE_DISTANCE)
    return unit_step(sigma_drm - distance(c_p, c_q))


@lru_cache(maxsize=8)
def _window_mask(n_rows: int, n_cols: int, offset: int, window: int | None):
    """Mask of evaluated pairs for a block whose first row sits ``offset`` columns in."""
    c_idx = np.arange(offset, offset + n_rows)[:, None]
    i_idx = np.arange(n_cols)[None, :]
    mask = i_idx < c_idx
    if window is not None:
        mask &= i_idx >= c_idx - window
    mask.setflags(write=False)
    return mask, int(np.count_nonzero(mask))


def _block_pairs(C, Cn, degenerate, sigma, b0, b1, window):
    lo = 0 if window is None else max(0, b0 - window)
    G = Cn[b0:b1] @ Cn[lo:b1].T
    mask, evaluations = _window_mask(b1 - b0, b1 - lo, b0 - lo, window)
    D = np.subtract(1.0, G, out=G)
    if degenerate is not None:
        D[:, degenerate[lo:b1]] = DEGENERATE_DISTANCE
        D[degenerate[b0:b1], :] = DEGENERATE_DISTANCE
    rows, cols = np.nonzero(mask & (D <= sigma + BORDER))
    if len(rows) == 0:
        return np.empty((0, 2), dtype=np.int64), evaluations
    keep = np.ones(len(rows), dtype=bool)
    for k in np.flatnonzero(sigma - D[rows, cols] < BORDER):
        c, i = rows[k] + b0, cols[k] + lo
        keep[k] = merge_predicate(C[i], C[c], sigma) == 1
    pairs = np.stack([cols[keep] + lo, rows[keep] + b0], axis=1).astype(np.int64)
    return pairs, evaluations


def close_pairs(
    centroids,
    sigma: float,
    window: int | None = None,
    threads: int = 1,
    block: int = BLOCK,
) -> tuple[np.ndarray, int]:
    """Pairs ``(i, c)`` with ``i < c`` whose centroids satisfy the merge predicate.

    With ``window`` set only pairs with ``c - i <= window`` are evaluated.
    Returns ``(pairs, evaluations)`` where ``pairs`` is an ``(E, 2)`` array
    ordered by ``c`` then ``i`` and ``evaluations`` counts predicate
    evaluations actually performed.
    """
    C = np.asarray(centroids, dtype=np.float64)
    n = len(C)
    if n == 0:
        return np.empty((0, 2), dtype=np.int64), 0
    Cn, degenerate = normalize_rows(C)
    if not degenerate.any():
        degenerate = None
    if window is not None:
        block = min(block, max(64, window))
    starts = list(range(0, n, block))

    def work(b0):
        return _block_pairs(C, Cn, degenerate, sigma, b0, min(n, b0 + block), window)

    if threads > 1 and len(starts) > 1:
        with threadpool_limits(1), ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(b0) for b0 in starts]
    pairs = np.concatenate([r[0] for r in results]) if results else np.empty((0, 2), np.int64)
    return pairs, sum(r[1] for r in results)
