"""Dataset ingestion, binary matrix/label files and SVG scatter output.

Binary layouts (all little-endian):

``UMD1`` matrix
    4 magic bytes, u64 n_rows, u64 n_cols, n_rows*n_cols float32 row-major.
``UML1`` labels
    4 magic bytes, u64 n, n int64.
``UMK1`` k-NN graph
    4 magic bytes, u64 n, u64 k, n*k int64 indices, n*k float64 distances.
"""

import csv
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MATRIX_MAGIC = b"UMD1"
LABEL_MAGIC = b"UML1"
KNN_MAGIC = b"UMK1"

_HEADER2 = struct.Struct("<QQ")
_HEADER1 = struct.Struct("<Q")

# 20-color qualitative palette (tab20 ordering)
PALETTE = (
    "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c",
    "#98df8a", "#d62728", "#ff9896", "#9467bd", "#c5b0d5",
    "#8c564b", "#c49c94", "#e377c2", "#f7b6d2", "#7f7f7f",
    "#c7c7c7", "#bcbd22", "#dbdb8d", "#17becf", "#9edae5",
)


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def atomic_write(path, data):
    """Write ``data`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# CSV


def _resolve_label_column(label_column, header, n_cols):
    if label_column is None:
        return None
    if isinstance(label_column, int) or (
        isinstance(label_column, str) and label_column.lstrip("-").isdigit()
        and (header is None or label_column not in header)
    ):
        idx = int(label_column)
        if idx < 0:
            idx += n_cols
        if not 0 <= idx < n_cols:
            raise ValueError(f"label column index {label_column} out of range")
        return idx
    if header is None:
        raise ValueError("label column given by name but the file has no header")
    try:
        return header.index(label_column)
    except ValueError:
        raise ValueError(f"label column {label_column!r} not found in header") from None


def load_csv(path, has_header=False, label_column=None):
    """Load a numeric CSV file.

    Parameters
    ----------
    path: str or Path
    has_header: bool
        Whether the first line holds column names.
    label_column: str, int or None
        Column (name or 0-based index) holding integer class labels. It is
        removed from the feature matrix and returned separately.

    Returns
    -------
    data: float32 array of shape (n_rows, n_cols)
    labels: int64 array of shape (n_rows,) or None
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]

    header = None
    first_line = 1
    if has_header:
        if not rows:
            raise FormatError(f"{path}: missing header line")
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first_line = 2

    if not rows:
        n_cols = len(header) if header is not None else 0
        label_idx = _resolve_label_column(label_column, header, n_cols)
        width = n_cols - (label_idx is not None)
        labels = np.zeros(0, dtype=np.int64) if label_idx is not None else None
        return np.zeros((0, width), dtype=np.float32), labels

    n_cols = len(header) if header is not None else len(rows[0])
    label_idx = _resolve_label_column(label_column, header, n_cols)

    values = np.empty((len(rows), n_cols), dtype=np.float64)
    labels = np.empty(len(rows), dtype=np.int64) if label_idx is not None else None
    for r, row in enumerate(rows):
        line = r + first_line
        if len(row) != n_cols:
            raise FormatError(
                f"{path}: ragged row {line}: expected {n_cols} columns, got {len(row)}"
            )
        for c, cell in enumerate(row):
            cell = cell.strip()
            if c == label_idx:
                try:
                    labels[r] = int(cell)
                except ValueError:
                    raise FormatError(
                        f"{path}: non-integer label {cell!r} at row {line}, column {c + 1}"
                    ) from None
                continue
            try:
                v = float(cell)
            except ValueError:
                raise FormatError(
                    f"{path}: unparsable cell {cell!r} at row {line}, column {c + 1}"
                ) from None
            if not np.isfinite(v):
                raise FormatError(f"{path}: non-finite value at row {line}, column {c + 1}")
            values[r, c] = v

    if label_idx is not None:
        values = np.delete(values, label_idx, axis=1)
    return values.astype(np.float32), labels


def save_csv(matrix, path):
    matrix = np.asarray(matrix)
    lines = [",".join(repr(float(v)) for v in row) for row in matrix]
    atomic_write(path, ("\n".join(lines) + ("\n" if lines else "")).encode())


# --------------------------------------------------------------------------
# binary matrices and labels


def matrix_to_bytes(matrix):
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    return (
        MATRIX_MAGIC
        + _HEADER2.pack(*matrix.shape)
        + np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    )


def matrix_from_bytes(buf, offset=0):
    """Parse a UMD1 matrix starting at ``offset``.

    Returns the matrix and the offset just past it.
    """
    buf = memoryview(buf)
    end = offset + 4 + _HEADER2.size
    if len(buf) < end:
        raise FormatError("truncated matrix header")
    if bytes(buf[offset:offset + 4]) != MATRIX_MAGIC:
        raise FormatError(f"bad magic {bytes(buf[offset:offset + 4])!r}, expected UMD1")
    n_rows, n_cols = _HEADER2.unpack_from(buf, offset + 4)
    count = n_rows * n_cols
    if n_rows > 2**62 or n_cols > 2**62 or count * 4 > 2**62:
        raise FormatError(f"matrix size overflow ({n_rows} x {n_cols})")
    stop = end + 4 * count
    if len(buf) < stop:
        raise FormatError(
            f"truncated payload: need {4 * count} bytes, have {len(buf) - end}"
        )
    values = np.frombuffer(buf[end:stop], dtype="<f4").astype(np.float32)
    return values.reshape(n_rows, n_cols), stop


def load_binary(path):
    """Read a UMD1 matrix file."""
    with open(path, "rb") as fh:
        buf = fh.read()
    matrix, stop = matrix_from_bytes(buf)
    if stop != len(buf):
        raise FormatError(f"{path}: {len(buf) - stop} trailing bytes")
    return matrix


def save_binary(matrix, path):
    """Write a UMD1 matrix file; load_binary inverts this bit-exactly."""
    atomic_write(path, matrix_to_bytes(matrix))


def save_labels(labels, path):
    labels = np.asarray(labels, dtype=np.int64)
    atomic_write(
        path, LABEL_MAGIC + _HEADER1.pack(labels.shape[0]) + labels.astype("<i8").tobytes()
    )


def load_labels(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != LABEL_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected UML1")
    if len(buf) < 12:
        raise FormatError(f"{path}: truncated header")
    (n,) = _HEADER1.unpack_from(buf, 4)
    if n > 2**60:
        raise FormatError(f"{path}: label count overflow")
    if len(buf) != 12 + 8 * n:
        raise FormatError(f"{path}: expected {8 * n} label bytes, have {len(buf) - 12}")
    return np.frombuffer(buf, dtype="<i8", offset=12).astype(np.int64)


def save_knn_graph(graph, path):
    idx = np.asarray(graph.indices, dtype="<i8")
    dist = np.asarray(graph.distances, dtype="<f8")
    atomic_write(
        path, KNN_MAGIC + _HEADER2.pack(*idx.shape) + idx.tobytes() + dist.tobytes()
    )


def load_knn_graph(path):
    from .knn import KnnGraph

    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != KNN_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected UMK1")
    if len(buf) < 20:
        raise FormatError(f"{path}: truncated header")
    n, k = _HEADER2.unpack_from(buf, 4)
    if n * k > 2**58:
        raise FormatError(f"{path}: graph size overflow")
    if len(buf) != 20 + 16 * n * k:
        raise FormatError(f"{path}: truncated payload")
    idx = np.frombuffer(buf, dtype="<i8", count=n * k, offset=20).reshape(n, k)
    dist = np.frombuffer(buf, dtype="<f8", offset=20 + 8 * n * k).reshape(n, k)
    return KnnGraph(idx.astype(np.int64), dist.astype(np.float64))


def load_matrix(path, has_header=False, label_column=None):
    """Load a matrix by extension: ``.csv``/``.txt`` as CSV, anything else as UMD1."""
    if str(path).lower().endswith((".csv", ".txt")):
        return load_csv(path, has_header=has_header, label_column=label_column)
    if label_column is not None:
        raise ValueError("label_column only applies to CSV input")
    return load_binary(path), None


# --------------------------------------------------------------------------
# SVG


def emit_scatter_svg(embedding, path, labels=None, size=800, radius=2.5):
    """Render a 2-D embedding as an SVG scatter plot.

    The viewport is the bounding box of the points plus a 5% margin. Each
    distinct label gets its own palette color (cycled after 20 labels);
    without labels every marker uses the first color.
    """
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.ndim != 2 or embedding.shape[1] != 2:
        raise ValueError(f"scatter needs an (n, 2) embedding, got shape {embedding.shape}")
    if not np.all(np.isfinite(embedding)):
        raise ValueError("embedding contains non-finite coordinates")
    n = embedding.shape[0]
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape[0] != n:
            raise ValueError(f"{labels.shape[0]} labels for {n} points")
        _, codes = np.unique(labels, return_inverse=True)
    else:
        codes = np.zeros(n, dtype=np.int64)

    if n:
        lo = embedding.min(axis=0)
        hi = embedding.max(axis=0)
    else:
        lo = np.zeros(2)
        hi = np.ones(2)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    lo = lo - 0.05 * span
    span = span * 1.1
    scale = size / span.max()
    width, height = span * scale

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1f}" '
        f'height="{height:.1f}" viewBox="0 0 {width:.3f} {height:.3f}">',
        f'<rect width="{width:.3f}" height="{height:.3f}" fill="white"/>',
    ]
    for (x, y), c in zip(embedding, codes):
        px = (x - lo[0]) * scale
        py = height - (y - lo[1]) * scale  # y axis points up
        out.append(
            f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{radius}" '
            f'fill="{PALETTE[int(c) % len(PALETTE)]}"/>'
        )
    out.append("</svg>")
    atomic_write(path, ("\n".join(out) + "\n").encode())
