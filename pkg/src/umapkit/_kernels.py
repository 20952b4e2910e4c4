"""Compiled per-edge SGD loop for the asynchronous optimizer mode.

The loop writes straight into the shared float32 embedding. Several
threads may run it over disjoint edge ranges at once without any locking;
updates to a shared vertex then race, exactly like hogwild SGD.
"""

import numba
import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_G = np.uint64(0x9E3779B97F4A7C15)


@numba.njit(inline="always")
def _mix(x):
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


@numba.njit(inline="always")
def _clip(v, c):
    if v > c:
        return c
    if v < -c:
        return -c
    return v


@numba.njit(nogil=True, cache=True)
def sgd_edge_range(
    emb, ref, head, tail, keys, eps, next_sample, eps_neg, next_neg,
    start, stop, t, epoch, alpha, a, b, clip, stream_key, n_neg_rate,
    move_reference, same_array,
):
    dim = emb.shape[1]
    n_ref = ref.shape[0]
    ep = np.uint64(epoch) + _G
    for e in range(start, stop):
        if next_sample[e] > t:
            continue
        i = head[e]
        j = tail[e]

        d2 = 0.0
        for d in range(dim):
            diff = np.float64(emb[i, d]) - np.float64(ref[j, d])
            d2 += diff * diff
        if d2 > 0.0:
            coef = -2.0 * a * b * d2 ** (b - 1.0) / (a * d2 ** b + 1.0)
        else:
            coef = 0.0
        for d in range(dim):
            g = _clip(coef * (np.float64(emb[i, d]) - np.float64(ref[j, d])), clip)
            emb[i, d] += g * alpha
            if move_reference:
                ref[j, d] -= g * alpha
        next_sample[e] += eps[e]

        if n_neg_rate == 0:
            continue
        n_neg = int((t - next_neg[e]) / eps_neg[e])
        hk = _mix(stream_key ^ (np.uint64(keys[e]) + _G))
        hk = _mix(hk ^ ep)
        for s in range(n_neg):
            h = _mix(hk ^ (np.uint64(s) + _G))
            k = np.int64(h % np.uint64(n_ref))
            if same_array and k == i:
                continue
            d2 = 0.0
            for d in range(dim):
                diff = np.float64(emb[i, d]) - np.float64(ref[k, d])
                d2 += diff * diff
            if d2 > 0.0:
                coef = 2.0 * b / ((0.001 + d2) * (a * d2 ** b + 1.0))
                for d in range(dim):
                    g = _clip(coef * (np.float64(emb[i, d]) - np.float64(ref[k, d])), clip)
                    emb[i, d] += g * alpha
            else:
                emb[i, 0] += clip * alpha
        if n_neg > 0:
            next_neg[e] += n_neg * eps_neg[e]
