"""Batched trustworthiness of an embedding.

Input-space ranks are produced one batch of rows at a time, so memory stays
at ``batch_size x n`` instead of ``n x n``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .knn import build_index, query

_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class TrustConfig:
    k: int = 15
    batch_size: int = 512

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def normalizer(n, k):
    return 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0))


@numba.njit(nogil=True, cache=True, inline="always")
def _sq(x, i, l):
    s = 0.0
    for f in range(x.shape[1]):
        t = x[l, f] - x[i, f]
        s += t * t
    return s


@numba.njit(nogil=True, cache=True)
def _pair_sq(x, start, j):
    out = np.empty(j.shape, dtype=np.float64)
    for r in range(j.shape[0]):
        for p in range(j.shape[1]):
            out[r, p] = _sq(x, start + r, j[r, p])
    return out


@numba.njit(nogil=True, cache=True)
def _rank_counts(approx, x, start, thr, ids, err):
    """Input-space ranks of sorted (distance, id) thresholds, one row each.

    ``approx`` holds expansion distances of rows ``start..`` to every point.
    Entries clearly below a threshold are counted through a binary search;
    entries within ``err`` of one are settled by an exact distance.
    """
    b, n = approx.shape
    k = thr.shape[1]
    ranks = np.empty((b, k), dtype=np.int64)
    cnt = np.zeros(k + 1, dtype=np.int64)
    extra = np.zeros(k, dtype=np.int64)
    for r in range(b):
        i = start + r
        e = err[r]
        cnt[:] = 0
        extra[:] = 0
        # entries past the last threshold's error band never count
        far = thr[r, k - 1] + e
        for l in range(n):
            a = approx[r, l]
            if a > far:
                continue
            if l == i:
                continue
            # number of thresholds with thr - e <= a
            lo, hi = 0, k
            while lo < hi:
                mid = (lo + hi) >> 1
                if thr[r, mid] - e <= a:
                    lo = mid + 1
                else:
                    hi = mid
            cnt[lo] += 1
            exact = -1.0
            p = lo - 1
            while p >= 0 and thr[r, p] + e >= a:
                if exact < 0.0:
                    exact = _sq(x, i, l)
                if exact < thr[r, p] or (exact == thr[r, p] and l < ids[r, p]):
                    extra[p] += 1
                p -= 1
        below = 0
        for p in range(k):
            below += cnt[p]
            ranks[r, p] = 1 + below + extra[p]
    return ranks


def _batch_penalty(x, x_norms, nbrs, start, stop, k):
    """Sum of ``rank - k`` over embedded neighbors ranked beyond ``k`` in input space.

    ``rank(i, j) = 1 + #{l != i : (d(i,l), l) < (d(i,j), j)}`` on exact
    float64 squared distances.
    """
    q = x[start:stop]
    qn = x_norms[start:stop]
    approx = qn[:, None] + x_norms[None, :] - 2.0 * (q @ x.T)
    err = 2.0 * 4.0 * (x.shape[1] + 4) * _EPS * (qn + x_norms.max()) + 1e-300

    j = nbrs[start:stop]
    dij = _pair_sq(x, start, j)
    order = np.lexsort((j, dij), axis=1)
    thr = np.take_along_axis(dij, order, axis=1)
    ids = np.take_along_axis(j, order, axis=1)
    ranks = _rank_counts(approx, x, start, thr, ids, err)
    return int(np.maximum(ranks - k, 0).sum())


def trustworthiness(x, embedding, cfg=TrustConfig(), n_threads=1):
    """Trustworthiness ``T(k)`` in [0, 1].

    ``T(k) = 1 - 2 / (n k (2n - 3k - 1)) * sum_i sum_{j in U_k(i)} (r(i, j) - k)``
    where ``U_k(i)`` are the embedded k nearest neighbors of ``i`` that are
    not among its k nearest in input space and ``r(i, j)`` is the input-space
    rank of ``j`` (self excluded, nearest = 1, ties to the lower index).

    Both matrices are read as float32, the library's storage type, and
    distances are evaluated in float64. The result does not depend on
    ``batch_size`` or ``n_threads``.
    """
    x = np.asarray(x, dtype=np.float32)
    emb = np.asarray(embedding, dtype=np.float32)
    if x.ndim != 2 or emb.ndim != 2:
        raise ValueError("expected 2-D arrays")
    n = x.shape[0]
    if emb.shape[0] != n:
        raise ValueError(f"shape mismatch: {n} input rows vs {emb.shape[0]} embedding rows")
    k = cfg.k
    if not 2 * k < n:
        raise ValueError(f"k={k} must be below n/2 = {n / 2:g}")

    nbrs = query(build_index(emb), emb, k, exclude_self=True, n_threads=n_threads).indices
    x64 = x.astype(np.float64)
    norms = (x64 * x64).sum(axis=1)
    starts = range(0, n, cfg.batch_size)

    def run(s):
        return _batch_penalty(x64, norms, nbrs, s, min(s + cfg.batch_size, n), k)

    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    # integer partial sums: exact, so batch order cannot matter
    penalty = sum(parts)
    return 1.0 - normalizer(n, k) * penalty
