"""Slow, obviously-correct reference implementations used by the tests.

None of these share code with the package; they work on dense matrices and
full sorts.
"""

import math

import numpy as np


def knn_full_sort(reference, queries, k, exclude_self=False):
    """Ids and squared distances by sorting every reference row per query."""
    ref = np.asarray(reference, dtype=np.float32).astype(np.float64)
    q = np.asarray(queries, dtype=np.float32).astype(np.float64)
    n_ref = ref.shape[0]
    ids = np.empty((q.shape[0], k), dtype=np.int64)
    d2 = np.empty((q.shape[0], k))
    for i in range(q.shape[0]):
        diff = ref - q[i]
        dist = (diff * diff).sum(axis=-1)
        pairs = sorted((dist[j], j) for j in range(n_ref) if not (exclude_self and j == i))
        ids[i] = [j for _, j in pairs[:k]]
        d2[i] = [d for d, _ in pairs[:k]]
    return ids, d2


def trust_full_matrix(x, emb, k):
    """Trustworthiness from full n x n distance matrices and full sorts."""
    x = np.asarray(x, dtype=np.float32).astype(np.float64)
    e = np.asarray(emb, dtype=np.float32).astype(np.float64)
    n = x.shape[0]

    def dmat(m):
        diff = m[:, None, :] - m[None, :, :]
        return (diff ** 2).sum(-1)

    dx = dmat(x)
    de = dmat(e)
    penalty = 0
    for i in range(n):
        order_x = sorted((j for j in range(n) if j != i), key=lambda j: (dx[i, j], j))
        rank = {j: r + 1 for r, j in enumerate(order_x)}
        order_e = sorted((j for j in range(n) if j != i), key=lambda j: (de[i, j], j))
        for j in order_e[:k]:
            if rank[j] > k:
                penalty += rank[j] - k
    return 1.0 - 2.0 / (n * k * (2 * n - 3 * k - 1)) * penalty


def fit_ab_grid(min_dist, spread):
    """Coarse-to-fine grid search for the kernel coefficients."""
    x = np.linspace(0.0, 3.0 * spread, 300)
    y = np.where(x <= min_dist, 1.0, np.exp(-(x - min_dist) / spread))
    x2 = x * x

    def sse(a, b):
        return ((1.0 / (1.0 + a[..., None] * x2 ** b[..., None]) - y) ** 2).sum(-1)

    a_lo, a_hi, b_lo, b_hi = 0.05, 10.0, 0.1, 3.0
    for _ in range(12):
        aa, bb = np.meshgrid(np.linspace(a_lo, a_hi, 61), np.linspace(b_lo, b_hi, 61))
        s = sse(aa, bb)
        r, c = np.unravel_index(np.argmin(s), s.shape)
        a, b = aa[r, c], bb[r, c]
        da = (a_hi - a_lo) / 10
        db = (b_hi - b_lo) / 10
        a_lo, a_hi = max(1e-6, a - da), a + da
        b_lo, b_hi = max(1e-6, b - db), b + db
    return float(a), float(b), float(sse(np.array(a), np.array(b)))


def laplacian_eig(w):
    """Dense eigen-decomposition of I - D^-1/2 W D^-1/2, ascending."""
    w = np.asarray(w, dtype=np.float64)
    deg = w.sum(1)
    inv = np.where(deg > 0, 1 / np.sqrt(np.where(deg > 0, deg, 1)), 0)
    lap = np.eye(len(w)) - inv[:, None] * w * inv[None, :]
    return np.linalg.eigh(lap)


def solve_sigma_scalar(dists, target):
    """Plain linear bisection of one row's bandwidth, in pure Python."""
    pos = [d for d in dists if d > 0]
    rho = min(pos) if pos else 0.0

    def total(s):
        return sum(math.exp(-max(0.0, d - rho) / s) for d in dists)

    lo, hi = 1e-9, 1e4
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) > target:
            hi = mid
        else:
            lo = mid
    return rho, 0.5 * (lo + hi)


def attract_loss(xi, xj, a, b, eps):
    d2 = float(((xi - xj) ** 2).sum()) + eps
    return math.log1p(a * d2 ** b)


def repulse_loss(xi, xj, a, b, eps):
    d2 = float(((xi - xj) ** 2).sum()) + eps
    phi = 1.0 / (1.0 + a * d2 ** b)
    return -math.log(1.0 - phi)


def central_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for c in range(x.shape[0]):
        up = x.copy()
        dn = x.copy()
        up[c] += h
        dn[c] -= h
        g[c] = (f(up) - f(dn)) / (2 * h)
    return g


def same_label_fraction(emb, labels, k=15):
    """Mean share of each point's k embedded neighbors that carry its label."""
    e = np.asarray(emb, dtype=np.float64)
    d = ((e[:, None, :] - e[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    return float((labels[nn] == labels[:, None]).mean())


def _dense_sq(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return (diff * diff).sum(-1)


def knn_lexsort(reference, queries, k, exclude_self=False):
    """Same contract as ``knn_full_sort``, one lexsort over the full matrix."""
    ref = np.asarray(reference, dtype=np.float32).astype(np.float64)
    q = np.asarray(queries, dtype=np.float32).astype(np.float64)
    d = _dense_sq(q, ref)
    if exclude_self:
        np.fill_diagonal(d, np.inf)
    cols = np.broadcast_to(np.arange(ref.shape[0]), d.shape)
    order = np.lexsort((cols, d), axis=-1)[:, :k]
    return order, np.take_along_axis(d, order, axis=1)


def trust_lexsort(x, emb, k):
    """Trustworthiness from full distance matrices, with ranks from one lexsort."""
    x = np.asarray(x, dtype=np.float32).astype(np.float64)
    e = np.asarray(emb, dtype=np.float32).astype(np.float64)
    n = x.shape[0]
    cols = np.broadcast_to(np.arange(n), (n, n))

    def order(m):
        d = _dense_sq(m, m)
        np.fill_diagonal(d, np.inf)
        return np.lexsort((cols, d), axis=-1)[:, : n - 1]

    ox = order(x)
    rank = np.empty((n, n), dtype=np.int64)
    rows = np.arange(n)[:, None]
    rank[rows, ox] = np.arange(1, n)
    ne = order(e)[:, :k]
    penalty = np.maximum(rank[rows, ne] - k, 0).sum()
    return 1.0 - 2.0 / (n * k * (2 * n - 3 * k - 1)) * penalty
