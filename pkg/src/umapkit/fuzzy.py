"""Fuzzy neighborhood weighting of a k-NN graph.

Each point gets a local exponential kernel over its k neighbors,
``exp(-max(0, d - rho) / sigma)``, anchored at the distance ``rho`` to its
closest non-zero neighbor and scaled by a bandwidth ``sigma`` chosen so the
memberships sum to ``log2(k)``. The directed memberships are then merged
into one symmetric graph with the probabilistic t-conorm ``a + b - a*b``.
"""

from dataclasses import dataclass

import numpy as np

from .sparse import CooMatrix, build_csr, drop_below, lookup_many, sort_coo

SIGMA_MIN = 1e-3
SIGMA_BRACKET = (1e-12, 1e6)
SMOOTH_TOL = 1e-5
N_ITER = 64


@dataclass(frozen=True)
class SmoothingParams:
    rho: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class FuzzyGraph:
    """Symmetric sorted COO graph with its CSR index; values in (0, 1]."""

    graph: CooMatrix
    index: object

    @property
    def n(self):
        return self.graph.shape[0]

    @classmethod
    def from_coo(cls, m):
        m = sort_coo(m)
        return cls(m, build_csr(m))


def membership_sums(distances, rho, sigma):
    """Row sums of the local kernel, in float64."""
    d = np.asarray(distances, dtype=np.float64)
    shifted = np.maximum(d - np.asarray(rho)[:, None], 0.0)
    return np.exp(-shifted / np.asarray(sigma, dtype=np.float64)[:, None]).sum(axis=1)


def smooth_knn(knn, target=None):
    """Solve for each row's ``rho`` and ``sigma``.

    ``sigma`` is found by bisection (on a log scale, inside
    ``SIGMA_BRACKET``) until the membership sum is within ``SMOOTH_TOL`` of
    ``target`` or ``N_ITER`` steps have run. It is then clamped from below
    at ``SIGMA_MIN`` times the row's mean distance, which is where rows
    without a solution (too many neighbors at or below ``rho``) end up.

    Parameters
    ----------
    knn: KnnGraph
    target: float, optional
        Desired membership sum; defaults to ``log2(k)``.

    Returns
    -------
    SmoothingParams
    """
    d = np.asarray(knn.distances, dtype=np.float64)
    n, k = d.shape
    if target is None:
        target = np.log2(k)

    positive = np.where(d > 0.0, d, np.inf)
    rho = positive.min(axis=1) if k else np.zeros(n)
    rho[~np.isfinite(rho)] = 0.0
    shifted = np.maximum(d - rho[:, None], 0.0)

    log_lo = np.full(n, np.log(SIGMA_BRACKET[0]))
    log_hi = np.full(n, np.log(SIGMA_BRACKET[1]))
    sigma = np.exp(0.5 * (log_lo + log_hi))
    active = np.ones(n, dtype=bool)
    for _ in range(N_ITER):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        mid = 0.5 * (log_lo[rows] + log_hi[rows])
        s = np.exp(mid)
        psum = np.exp(-shifted[rows] / s[:, None]).sum(axis=1)
        sigma[rows] = s
        done = np.abs(psum - target) <= SMOOTH_TOL
        active[rows[done]] = False
        too_big = psum > target
        log_hi[rows] = np.where(too_big, mid, log_hi[rows])
        log_lo[rows] = np.where(too_big, log_lo[rows], mid)

    floor = SIGMA_MIN * d.mean(axis=1) if k else np.zeros(n)
    sigma = np.maximum(sigma, floor)
    return SmoothingParams(rho, sigma)


def membership_strengths(knn, params, n_cols=None, skip_self=True):
    """Directed membership graph, one entry per (row, neighbor).

    Self-edges are omitted when ``skip_self`` (graphs of a dataset against
    itself); pass ``skip_self=False`` for query-to-reference graphs. Entries
    that underflow to zero in float32 are dropped so all values lie in
    (0, 1].
    """
    idx = np.asarray(knn.indices, dtype=np.int64)
    d = np.asarray(knn.distances, dtype=np.float64)
    n, k = idx.shape
    n_cols = n if n_cols is None else n_cols
    shifted = np.maximum(d - params.rho[:, None], 0.0)
    vals = np.exp(-shifted / params.sigma[:, None]).astype(np.float32)
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = idx.ravel()
    vals = vals.ravel()
    keep = vals > 0
    if skip_self:
        keep &= rows != cols
    m = CooMatrix((n, n_cols), rows[keep], cols[keep], vals[keep])
    return sort_coo(m)


def fuzzy_union(a):
    """Symmetrize with the probabilistic t-conorm ``a_ij + a_ji - a_ij * a_ji``.

    Every stored entry ``(i, j)`` looks up its transpose through the CSR
    index and emits ``a_ij - a_ij * a_ji / 2`` at both ``(i, j)`` and
    ``(j, i)``; the duplicate-merging sort then sums the (at most two)
    contributions per coordinate. Two-term float sums commute, so the result
    is exactly symmetric.
    """
    if a.shape[0] != a.shape[1]:
        raise ValueError("fuzzy union needs a square matrix")
    a = sort_coo(a)
    if a.nnz and (a.vals.min() < 0 or a.vals.max() > 1):
        raise ValueError("membership values must lie in [0, 1]")
    idx = build_csr(a)
    at, _ = lookup_many(a, idx, a.cols, a.rows)
    av = a.vals.astype(np.float64)
    half = av - 0.5 * av * at.astype(np.float64)
    merged = sort_coo(
        CooMatrix(
            a.shape,
            np.concatenate([a.rows, a.cols]),
            np.concatenate([a.cols, a.rows]),
            np.concatenate([half, half]),
        )
    )
    vals = np.minimum(merged.vals, np.float32(1.0))
    keep = (vals > 0) & (merged.rows != merged.cols)
    out = CooMatrix(a.shape, merged.rows[keep], merged.cols[keep], vals[keep], sorted=True)
    return FuzzyGraph(out, build_csr(out))


def supervised_adjust(b, labels, far_dist=5.0, unknown_dist=1.0):
    """Damp edges by label agreement.

    Edges between equal labels keep their weight, edges between two known
    but different labels are scaled by ``exp(-far_dist)`` and edges touching
    an unknown label (-1) by ``exp(-unknown_dist)``. Entries below 1e-8 are
    then dropped.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != b.n:
        raise ValueError(f"{labels.shape[0]} labels for a graph of {b.n} points")
    g = b.graph
    li = labels[g.rows]
    lj = labels[g.cols]
    factor = np.ones(g.nnz, dtype=np.float64)
    unknown = (li == -1) | (lj == -1)
    factor[unknown] = np.exp(-unknown_dist)
    factor[~unknown & (li != lj)] = np.exp(-far_dist)
    vals = (g.vals.astype(np.float64) * factor).astype(np.float32)
    out = drop_below(CooMatrix(g.shape, g.rows, g.cols, vals, sorted=True), 1e-8)
    return FuzzyGraph(out, build_csr(out))
