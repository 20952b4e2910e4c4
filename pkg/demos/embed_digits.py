"""Fit the digits data, score it, and draw it.

    python3 demos/embed_digits.py [out.svg]

Falls back to a seeded 10-cluster blob set when scikit-learn is missing.
"""

import sys
import time

import numpy as np

from umapkit import UMAP
from umapkit.io import emit_scatter_svg
from umapkit.trust import TrustConfig, trustworthiness


def load():
    try:
        from sklearn.datasets import load_digits
    except ImportError:
        r = np.random.default_rng(7)
        centers = r.uniform(-8, 8, size=(10, 64))
        y = np.arange(2000) % 10
        return (centers[y] + r.normal(scale=2.0, size=(2000, 64))).astype(np.float32), y
    d = load_digits()
    return d.data.astype(np.float32), d.target


def main():
    x, y = load()
    print(f"{x.shape[0]} rows x {x.shape[1]} features, {len(set(y))} classes")

    t0 = time.perf_counter()
    emb = UMAP(n_neighbors=15, random_state=0).fit_transform(x)
    print(f"fit in {time.perf_counter() - t0:.1f} s")

    # 1.0 means every embedded neighbor was also an input-space neighbor
    for k in (5, 15, 30):
        print(f"  trustworthiness k={k:2d}: {trustworthiness(x, emb, TrustConfig(k)):.4f}")

    out = sys.argv[1] if len(sys.argv) > 1 else "digits.svg"
    emit_scatter_svg(emb, out, labels=y)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
