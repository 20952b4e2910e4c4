"""Counter-based random streams.

Every random draw in the package is a pure function of a seed and a tuple
of integer counters, so results never depend on thread scheduling or on
the order in which draws are requested.
"""

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

# stream tags keep independent consumers from sharing draws
STREAM_INIT = 1
STREAM_NOISE = 2
STREAM_NEGATIVE = 3
STREAM_SPECTRAL = 4
STREAM_SAMPLE = 5


def mix64(x):
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    x = np.asarray(x, dtype=np.uint64)
    x = x ^ (x >> _S30)
    x = x * _M1
    x = x ^ (x >> _S27)
    x = x * _M2
    return x ^ (x >> _S31)


def hash_counters(seed, stream, *counters):
    """Hash ``(seed, stream, *counters)`` to uint64, broadcasting counters."""
    start = (int(seed) ^ (int(stream) * int(_GOLDEN))) & 0xFFFFFFFFFFFFFFFF
    # 1-element array rather than a scalar: array arithmetic wraps silently
    h = mix64(np.array([start], dtype=np.uint64))
    for c in counters:
        c = np.asarray(c).astype(np.uint64)
        h = mix64(h ^ (c + _GOLDEN))
    return h


def uniform01(h):
    """Map uint64 hashes to float64 in [0, 1) using the top 53 bits."""
    return (np.asarray(h, dtype=np.uint64) >> _S11).astype(np.float64) * (2.0 ** -53)


def uniform(seed, stream, shape, low, high):
    """Uniform float64 draws in [low, high) keyed by (seed, stream, row, col)."""
    n_rows, n_cols = shape
    rows = np.arange(n_rows, dtype=np.uint64)[:, None]
    cols = np.arange(n_cols, dtype=np.uint64)[None, :]
    u = uniform01(hash_counters(seed, stream, rows, cols))
    return low + (high - low) * u


def row_keys(data):
    """Content hash per row of a 2-D array; identical rows get identical keys."""
    data = np.ascontiguousarray(data)
    words = data.view(np.uint8).reshape(data.shape[0], -1)
    # fold bytes into uint64 words, padding to a multiple of 8 bytes
    pad = (-words.shape[1]) % 8
    if pad:
        words = np.concatenate(
            [words, np.zeros((words.shape[0], pad), dtype=np.uint8)], axis=1
        )
    words = np.ascontiguousarray(words).view(np.uint64)
    h = np.full(words.shape[0], np.uint64(words.shape[1]), dtype=np.uint64)
    for j in range(words.shape[1]):
        h = mix64(h ^ (words[:, j] + _GOLDEN))
    return h
