"""COO edge lists with a CSR row index.

A :class:`CooMatrix` stays in coordinate form throughout. Once sorted by
``(row, col)`` a :class:`CsrIndex` of row offsets can be laid over it, which
gives row slices for row-parallel work and a binary search for random access
(this is how the transposed value of an entry is found without
materializing a CSC copy).
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CooMatrix:
    shape: tuple
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    sorted: bool = False

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        vals = np.ascontiguousarray(self.vals, dtype=np.float32)
        if not rows.shape == cols.shape == vals.shape or rows.ndim != 1:
            raise ValueError("rows, cols and vals must be 1-D arrays of equal length")
        n_rows, n_cols = (int(s) for s in self.shape)
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
            raise ValueError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
            raise ValueError("column index out of range")
        object.__setattr__(self, "shape", (n_rows, n_cols))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "vals", vals)
        if self.sorted and rows.size > 1:
            keys = rows * n_cols + cols
            if np.any(np.diff(keys) <= 0):
                raise ValueError("sorted flag set but coordinates are not strictly increasing")

    @property
    def nnz(self):
        return self.rows.shape[0]

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense)
        r, c = np.nonzero(dense)
        return cls(dense.shape, r, c, dense[r, c], sorted=True)

    def to_dense(self):
        out = np.zeros(self.shape, dtype=np.float64)
        np.add.at(out, (self.rows, self.cols), self.vals.astype(np.float64))
        return out

    def transpose(self):
        return CooMatrix(self.shape[::-1], self.cols, self.rows, self.vals)

    def keys(self):
        """Linearized coordinates ``row * n_cols + col``."""
        return self.rows * self.shape[1] + self.cols


@dataclass(frozen=True)
class CsrIndex:
    indptr: np.ndarray

    @property
    def n_rows(self):
        return self.indptr.shape[0] - 1

    def row_slice(self, i):
        return slice(int(self.indptr[i]), int(self.indptr[i + 1]))


def sort_coo(m):
    """Sort entries by ``(row, col)``, summing duplicate coordinates.

    Duplicates are summed in float64 in their original relative order and
    stored back as float32.
    """
    if m.sorted:
        return m
    keys = m.keys()
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    vals = m.vals[order].astype(np.float64)
    if keys.size:
        starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
        vals = np.add.reduceat(vals, starts) if starts.size < keys.size else vals
        keys = keys[starts]
    n_cols = m.shape[1]
    return CooMatrix(m.shape, keys // n_cols, keys % n_cols, vals, sorted=True)


def build_csr(m):
    """Row offsets into a sorted COO matrix."""
    if not m.sorted:
        raise ValueError("build_csr needs a sorted COO matrix; call sort_coo first")
    counts = np.bincount(m.rows, minlength=m.shape[0])
    indptr = np.zeros(m.shape[0] + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return CsrIndex(indptr)


def lookup(m, idx, i, j):
    """Value stored at ``(i, j)``, or 0.0 when absent."""
    if not (0 <= i < m.shape[0] and 0 <= j < m.shape[1]):
        raise IndexError(f"({i}, {j}) out of range for shape {m.shape}")
    lo, hi = int(idx.indptr[i]), int(idx.indptr[i + 1])
    pos = lo + int(np.searchsorted(m.cols[lo:hi], j))
    if pos < hi and m.cols[pos] == j:
        return float(m.vals[pos])
    return 0.0


def lookup_many(m, idx, i, j):
    """Vectorized :func:`lookup`.

    Returns the values and a boolean mask telling which coordinates are
    stored.
    """
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    if i.size and (i.min() < 0 or i.max() >= m.shape[0] or j.min() < 0 or j.max() >= m.shape[1]):
        raise IndexError("lookup coordinate out of range")
    if idx.n_rows != m.shape[0]:
        raise ValueError("index does not match matrix")
    if m.nnz == 0:
        return np.zeros(i.shape, dtype=np.float32), np.zeros(i.shape, dtype=bool)
    # keys are sorted globally, so the hit for (i, j) can only fall inside
    # indptr[i]:indptr[i + 1]
    target = i * m.shape[1] + j
    pos = np.searchsorted(m.keys(), target)
    pos = np.minimum(pos, idx.indptr[i + 1])
    safe = np.minimum(pos, m.nnz - 1)
    found = (pos < idx.indptr[i + 1]) & (m.cols[safe] == j)
    vals = np.where(found, m.vals[safe], np.float32(0.0)).astype(np.float32)
    return vals, found


def normalize_rows(m, idx, norm="l1"):
    """Divide each nonempty row by its L1 sum (``"l1"``) or max abs value (``"linf"``)."""
    norm = norm.lower()
    if norm not in ("l1", "linf"):
        raise ValueError(f"unknown norm {norm!r}")
    if not m.sorted:
        raise ValueError("normalize_rows needs a sorted, indexed COO matrix")
    vals = np.abs(m.vals.astype(np.float64))
    scale = np.zeros(m.shape[0], dtype=np.float64)
    starts = idx.indptr[:-1]
    nonempty = idx.indptr[1:] > starts
    if nonempty.any():
        reduce = np.add.reduceat if norm == "l1" else np.maximum.reduceat
        scale[nonempty] = reduce(vals, starts[nonempty])
    row_scale = scale[m.rows]
    out = m.vals.astype(np.float64)
    nz = row_scale > 0
    out[nz] /= row_scale[nz]
    return CooMatrix(m.shape, m.rows, m.cols, out, sorted=m.sorted)


def drop_below(m, threshold):
    """Remove entries with ``|val| < threshold``, keeping order and shape."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    keep = np.abs(m.vals) >= threshold
    if keep.all():
        return m
    return CooMatrix(m.shape, m.rows[keep], m.cols[keep], m.vals[keep], sorted=m.sorted)
