"""Initial layouts for the embedding optimizer."""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import _rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InitConfig:
    strategy: str = "spectral"
    n_components: int = 2
    seed: int = 0
    scale: float = 10.0

    def __post_init__(self):
        if self.strategy not in ("random", "spectral"):
            raise ValueError(f"unknown init strategy {self.strategy!r}")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if not self.scale > 0:
            raise ValueError("scale must be positive")


def random_init(n, cfg):
    """i.i.d. uniform coordinates in [-scale, scale], keyed by (seed, row, col)."""
    coords = _rng.uniform(cfg.seed, _rng.STREAM_INIT, (n, cfg.n_components), -cfg.scale, cfg.scale)
    return np.clip(coords.astype(np.float32), -cfg.scale, cfg.scale)


def normalized_adjacency(b):
    """``D^-1/2 W D^-1/2`` as a scipy CSR matrix, plus ``sqrt(deg)``."""
    g = b.graph
    w = scipy.sparse.csr_matrix(
        (g.vals.astype(np.float64), (g.rows, g.cols)), shape=g.shape
    )
    deg = np.asarray(w.sum(axis=1)).ravel()
    sqrt_deg = np.sqrt(deg)
    inv = np.zeros_like(sqrt_deg)
    inv[deg > 0] = 1.0 / sqrt_deg[deg > 0]
    d_inv = scipy.sparse.diags(inv)
    return (d_inv @ w @ d_inv).tocsr(), sqrt_deg


def spectral_vectors(b, n_components, seed=0, max_iter=500, tol=1e-4, oversample=2):
    """Low eigenvectors of the symmetric normalized Laplacian ``L = I - N``.

    Solved with LOBPCG under the constraint of orthogonality to the trivial
    eigenvector ``D^1/2 1``. A block of ``n_components + oversample`` seeded
    vectors is iterated; block methods keep making progress when a
    disconnected graph puts many eigenvalues at or near zero.

    Returns
    -------
    vectors: array (n, n_components), unit columns
    eigenvalues: array (n_components,), eigenvalues of ``L``, ascending
    converged: bool
        Whether every returned column reached a residual
        ``|Lv - lambda v| <= tol`` within ``max_iter`` iterations.
    """
    n = b.n
    if n < n_components + 1:
        raise ValueError(f"spectral init needs at least {n_components + 1} points, got {n}")
    norm_adj, sqrt_deg = normalized_adjacency(b)
    lap = (scipy.sparse.identity(n, format="csr") - norm_adj).tocsr()
    trivial = sqrt_deg / np.linalg.norm(sqrt_deg) if sqrt_deg.any() else sqrt_deg

    p = min(n - 1, n_components + oversample)
    x = _rng.uniform(seed, _rng.STREAM_SPECTRAL, (n, p), -1.0, 1.0)
    x -= np.outer(trivial, trivial @ x)
    if n - 1 <= 5 * p:
        # too small for an iterative solver
        # lift the trivial direction above the spectrum, which lies in [0, 2]
        dense = lap.toarray() + 3.0 * np.outer(trivial, trivial)
        evals, evecs = np.linalg.eigh(dense)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            evals, evecs = scipy.sparse.linalg.lobpcg(
                lap, x, Y=trivial[:, None], largest=False, tol=0.5 * tol, maxiter=max_iter
            )
    order = np.argsort(evals, kind="stable")[:n_components]
    vecs = evecs[:, order]
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    lam = evals[order]
    resid = np.linalg.norm(lap @ vecs - vecs * lam, axis=0)
    converged = bool(np.isfinite(resid).all() and resid.max() <= tol)
    logger.debug("spectral residuals %s (converged=%s)", resid, converged)
    return vecs, lam, converged


def spectral_init(b, cfg, max_iter=500, tol=1e-4):
    """Spectral layout of a fuzzy graph.

    Each eigenvector column is mapped affinely onto [-scale, scale] and a
    uniform jitter of amplitude ``1e-4 * scale`` is added. When the
    eigensolver does not converge the random layout for the same seed is
    returned instead.

    Returns
    -------
    embedding: float32 array (n, n_components)
    converged: bool
    """
    vecs, _, converged = spectral_vectors(
        b, cfg.n_components, seed=cfg.seed, max_iter=max_iter, tol=tol
    )
    if not converged:
        logger.warning("spectral initialization did not converge; using random init")
        return random_init(b.n, cfg), False
    lo = vecs.min(axis=0)
    hi = vecs.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    coords = (vecs - lo) / span * (2.0 * cfg.scale) - cfg.scale
    noise = _rng.uniform(
        cfg.seed, _rng.STREAM_NOISE, coords.shape, -1e-4 * cfg.scale, 1e-4 * cfg.scale
    )
    return (coords + noise).astype(np.float32), True
