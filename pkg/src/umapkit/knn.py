"""Exact brute-force k-nearest-neighbor search.

Candidates are pre-selected per query block with the BLAS-friendly
expansion ``|q|^2 + |r|^2 - 2 q.r`` and then re-scored with direct float64
differences. A rounding bound on the expansion tells whether the candidate
set provably holds the true k nearest; rows where it cannot be proven fall
back to an exhaustive exact scan. Rows are ordered by (squared distance,
reference index), so ties always go to the lower index.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

# distance finalizers applied to exact squared distances; new metrics that
# are monotone in squared Euclidean distance can be registered here
METRICS = {
    "euclidean": np.sqrt,
    "sqeuclidean": lambda d2: d2,
}

_BLOCK = 256
_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class KnnGraph:
    """Neighbor ids and distances, one row per query, ascending by distance."""

    indices: np.ndarray
    distances: np.ndarray

    @property
    def n(self):
        return self.indices.shape[0]

    @property
    def k(self):
        return self.indices.shape[1]


@dataclass(frozen=True)
class BruteForceIndex:
    reference: np.ndarray
    metric: str = "euclidean"

    @property
    def n(self):
        return self.reference.shape[0]


def build_index(data, metric="euclidean"):
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError("cannot index an empty dataset")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; known: {sorted(METRICS)}")
    return BruteForceIndex(data, metric)


def _exact_sq(queries, reference, cand):
    diff = reference[cand] - queries[:, None, :]
    return (diff * diff).sum(axis=-1)


def _query_block(q, ref, ref_norms, k, self_ids):
    """k nearest (by exact squared distance, then id) for one block of queries."""
    n_ref = ref.shape[0]
    q_norms = (q * q).sum(axis=1)
    approx = q_norms[:, None] + ref_norms[None, :] - 2.0 * (q @ ref.T)
    np.maximum(approx, 0.0, out=approx)
    rows = np.arange(q.shape[0])
    if self_ids is not None:
        approx[rows, self_ids] = np.inf

    n_eligible = n_ref - (self_ids is not None)
    c = min(n_eligible, 2 * k + 8)
    if c < n_ref:
        cand = np.argpartition(approx, c - 1, axis=1)[:, :c]
    else:
        cand = np.broadcast_to(np.arange(n_ref), (q.shape[0], n_ref)).copy()
    exact = _exact_sq(q, ref, cand)
    if self_ids is not None:
        exact[cand == self_ids[:, None]] = np.inf

    order = np.lexsort((cand, exact), axis=1)[:, :k]
    idx = np.take_along_axis(cand, order, axis=1)
    d2 = np.take_along_axis(exact, order, axis=1)

    if c < n_eligible:
        # every non-candidate has approx >= the largest candidate approx;
        # require that bound to clear the k-th exact distance by more than
        # the expansion's rounding error
        err = 4.0 * (q.shape[1] + 4) * _EPS * (q_norms + ref_norms.max()) + 1e-300
        floor = np.take_along_axis(approx, cand, axis=1).max(axis=1) - 2.0 * err
        unsafe = np.flatnonzero(~(floor > d2[:, -1]))
        for r in unsafe:
            full = np.arange(n_ref)[None, :]
            ex = _exact_sq(q[r:r + 1], ref, full)[0]
            if self_ids is not None:
                ex[self_ids[r]] = np.inf
            o = np.lexsort((np.arange(n_ref), ex))[:k]
            idx[r] = o
            d2[r] = ex[o]
    return idx, d2


def query(index, queries, k, exclude_self=False, n_threads=1):
    """Exact k nearest reference rows for every query row.

    Parameters
    ----------
    index: BruteForceIndex
    queries: array of shape (n_queries, n_features)
    k: int
        Neighbors per query.
    exclude_self: bool
        Query row ``i`` never returns reference id ``i``. Only meaningful
        when the queries are the reference set itself; other rows at
        distance zero (duplicates) stay eligible.
    n_threads: int
        Worker threads over query blocks. Output does not depend on it.

    Returns
    -------
    KnnGraph
    """
    queries = np.asarray(queries, dtype=np.float32)
    ref = index.reference
    if queries.ndim != 2 or queries.shape[1] != ref.shape[1]:
        raise ValueError(
            f"dimension mismatch: queries have {queries.shape[-1]} columns, "
            f"reference has {ref.shape[1]}"
        )
    if exclude_self and queries.shape[0] != ref.shape[0]:
        raise ValueError("exclude_self requires querying the reference set against itself")
    limit = ref.shape[0] - (1 if exclude_self else 0)
    if not 1 <= k <= limit:
        raise ValueError(f"k={k} too large: at most {limit} neighbors available")

    ref64 = ref.astype(np.float64)
    q64 = queries.astype(np.float64)
    ref_norms = (ref64 * ref64).sum(axis=1)
    n = queries.shape[0]
    indices = np.empty((n, k), dtype=np.int64)
    sq = np.empty((n, k), dtype=np.float64)

    def run(start):
        stop = min(start + _BLOCK, n)
        self_ids = np.arange(start, stop) if exclude_self else None
        indices[start:stop], sq[start:stop] = _query_block(
            q64[start:stop], ref64, ref_norms, k, self_ids
        )

    starts = range(0, n, _BLOCK)
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return KnnGraph(indices, METRICS[index.metric](sq))


def validate_precomputed(graph, n, k, n_reference=None):
    """Check an externally computed graph and return it unchanged.

    ``n_reference`` bounds the neighbor ids (defaults to ``n``, i.e. a
    graph of a dataset against itself).
    """
    n_reference = n if n_reference is None else n_reference
    idx = np.asarray(graph.indices)
    dist = np.asarray(graph.distances)
    if idx.shape != (n, k) or dist.shape != (n, k):
        raise ValueError(
            f"precomputed graph has shape {idx.shape}/{dist.shape}, expected ({n}, {k})"
        )
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("neighbor ids must be integers")
    if np.isnan(dist).any():
        raise ValueError("precomputed distances contain NaN")
    if not np.isfinite(dist).all() or (dist < 0).any():
        raise ValueError("precomputed distances must be finite and non-negative")
    if idx.size and (idx.min() < 0 or idx.max() >= n_reference):
        raise ValueError(f"neighbor id out of range [0, {n_reference})")
    if k > 1:
        if (np.diff(dist, axis=1) < 0).any():
            raise ValueError("precomputed distances are not sorted ascending within rows")
        s = np.sort(idx, axis=1)
        if (s[:, 1:] == s[:, :-1]).any():
            raise ValueError("duplicate neighbor id within a row")
    return graph
