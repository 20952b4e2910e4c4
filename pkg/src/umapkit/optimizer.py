"""Negative-sampling SGD layout of a fuzzy graph.

The low-dimensional membership curve is ``phi(d) = 1 / (1 + a * d^(2b))``
with ``a, b`` fitted to the offset exponential set by ``min_dist`` and
``spread``. Each positive edge pulls its endpoints together following the
gradient of ``-log phi`` and each negative sample pushes the free endpoint
away following ``-log(1 - phi)``.

Two execution modes share the edge schedule and the counter-based negative
sampler:

``"async"``
    Per-edge updates written straight into the float32 embedding, edges
    split across threads with no synchronization (hogwild). Fast,
    reproducible only with a single thread.
``"deterministic"``
    Every update of an epoch is computed against the embedding as it stood
    at the start of the epoch, accumulated in float64 in a fixed edge order
    and applied once at the end of the epoch. Output is a pure function of
    the inputs and seed, for any thread count.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from . import _rng
from .sparse import CooMatrix

logger = logging.getLogger(__name__)

REPULSION_EPS = 0.001
MODES = ("async", "deterministic")
_CHUNK = 8192


def default_n_epochs(n):
    return 500 if n < 10000 else 200


@dataclass(frozen=True)
class OptimizerConfig:
    """SGD hyperparameters.

    ``n_epochs=None`` picks 500 epochs below 10k points and 200 above;
    ``a``/``b`` left as None are fitted from ``min_dist`` and ``spread``.
    """

    n_epochs: int = None
    initial_lr: float = 1.0
    n_negative_samples: int = 5
    min_dist: float = 0.1
    spread: float = 1.0
    a: float = None
    b: float = None
    clip: float = 4.0
    seed: int = 0
    mode: str = "async"
    n_threads: int = 1

    def __post_init__(self):
        if self.n_epochs is not None and self.n_epochs < 0:
            raise ValueError("n_epochs must be >= 0")
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be positive")
        if self.n_negative_samples < 0:
            raise ValueError("n_negative_samples must be >= 0")
        if self.min_dist < 0:
            raise ValueError("min_dist must be >= 0")
        if not self.spread > 0:
            raise ValueError("spread must be positive")
        for name in ("a", "b"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if not self.clip > 0:
            raise ValueError("clip must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_threads < 1:
            raise ValueError("n_threads must be >= 1")

    def resolve(self, n):
        """Fill in ``n_epochs`` for ``n`` points and fit ``a``/``b`` if unset."""
        cfg = self
        if cfg.n_epochs is None:
            cfg = replace(cfg, n_epochs=default_n_epochs(n))
        if cfg.a is None or cfg.b is None:
            a, b = fit_ab(cfg.min_dist, cfg.spread)
            cfg = replace(cfg, a=a, b=b)
        return cfg


def fit_ab(min_dist, spread, return_residual=False):
    """Least-squares fit of ``(1 + a x^(2b))^-1`` to the offset exponential.

    The target is 1 up to ``min_dist`` and ``exp(-(x - min_dist) / spread)``
    beyond it (the continuous form of the offset decay), sampled at 300
    points on ``[0, 3 * spread]``.
    """
    if not spread > 0 or min_dist < 0:
        raise ValueError(f"need spread > 0 and min_dist >= 0 (got {spread}, {min_dist})")
    x = np.linspace(0.0, 3.0 * spread, 300)
    y = np.where(x <= min_dist, 1.0, np.exp(-(x - min_dist) / spread))
    x2 = x * x

    def resid(p):
        return 1.0 / (1.0 + p[0] * x2 ** p[1]) - y

    sol = least_squares(resid, x0=[1.0, 1.0], bounds=([1e-8, 1e-8], [np.inf, np.inf]),
                        xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=2000)
    if not sol.success:
        raise RuntimeError(
            f"kernel fit did not converge for min_dist={min_dist}, spread={spread}: "
            f"{sol.message}"
        )
    a, b = float(sol.x[0]), float(sol.x[1])
    sse = float(np.sum(sol.fun ** 2))
    logger.debug("fit_ab(min_dist=%g, spread=%g) -> a=%g b=%g sse=%g", min_dist, spread, a, b, sse)
    if return_residual:
        return a, b, sse
    return a, b


def learning_rate(initial_lr, epoch, n_epochs):
    """Linearly decayed step size for ``epoch`` in ``0..n_epochs-1``."""
    return initial_lr * (1.0 - epoch / n_epochs)


def membership_curve(d2, a, b):
    """``phi`` as a function of squared distance."""
    return 1.0 / (1.0 + a * np.asarray(d2, dtype=np.float64) ** b)


# --------------------------------------------------------------------------
# gradients


def attractive_update(current, other, a, b, clip):
    """Clipped descent step (before the learning rate) on ``-log phi`` for ``current``.

    ``other`` moves by the negation when both endpoints are free.
    """
    diff = np.asarray(current, dtype=np.float64) - np.asarray(other, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", diff, diff)
    coef = np.zeros_like(d2)
    pos = d2 > 0
    dp = d2[pos]
    coef[pos] = -2.0 * a * b * dp ** (b - 1.0) / (a * dp ** b + 1.0)
    return np.clip(coef[:, None] * diff, -clip, clip)


def repulsive_update(current, other, a, b, clip):
    """Clipped descent step (before the learning rate) on ``-log(1 - phi)``.

    Coincident points get a kick of ``clip`` along the first coordinate.
    """
    diff = np.asarray(current, dtype=np.float64) - np.asarray(other, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", diff, diff)
    pos = d2 > 0
    coef = np.zeros_like(d2)
    dp = d2[pos]
    coef[pos] = 2.0 * b / ((REPULSION_EPS + dp) * (a * dp ** b + 1.0))
    g = np.clip(coef[:, None] * diff, -clip, clip)
    g[~pos] = 0.0
    g[~pos, 0] = clip
    return g


def edge_cross_entropy(embedding, head, tail, weights, a, b):
    """Weighted attractive cross-entropy ``sum w * -log phi`` over positive edges."""
    emb = np.asarray(embedding, dtype=np.float64)
    diff = emb[head] - emb[tail]
    d2 = np.einsum("ij,ij->i", diff, diff)
    return float(np.sum(np.asarray(weights, dtype=np.float64) * np.log1p(a * d2 ** b)))


# --------------------------------------------------------------------------
# schedule


@dataclass
class EpochSchedule:
    """Per-edge sampling counters (in epochs)."""

    epochs_per_sample: np.ndarray
    next_sample_epoch: np.ndarray
    epochs_per_negative_sample: np.ndarray
    next_negative_epoch: np.ndarray

    def copy(self):
        return EpochSchedule(*(np.array(f, copy=True) for f in (
            self.epochs_per_sample, self.next_sample_epoch,
            self.epochs_per_negative_sample, self.next_negative_epoch)))


def _coo(graph):
    return getattr(graph, "graph", graph)


def build_schedule(graph, n_epochs, n_negative_samples=5):
    """Weight-proportional edge schedule.

    Edges lighter than ``max_weight / n_epochs`` are dropped (they would be
    sampled less than once). An edge of weight ``w`` is sampled every
    ``max_weight / w`` epochs, and its negative samples are spaced
    ``n_negative_samples`` times more densely.

    Returns the filtered graph (same type as given) and its schedule.
    """
    if n_epochs < 1:
        raise ValueError("n_epochs must be >= 1")
    m = _coo(graph)
    if m.nnz == 0:
        raise ValueError("cannot schedule an empty graph")
    w = m.vals.astype(np.float64)
    w_max = w.max()
    keep = w >= w_max / n_epochs
    if not keep.all():
        m = CooMatrix(m.shape, m.rows[keep], m.cols[keep], m.vals[keep], sorted=m.sorted)
        w = w[keep]
        if hasattr(graph, "graph"):
            from .fuzzy import FuzzyGraph
            graph = FuzzyGraph.from_coo(m)
        else:
            graph = m
    eps = w_max / w
    if n_negative_samples > 0:
        eps_neg = eps / n_negative_samples
    else:
        eps_neg = np.full_like(eps, np.inf)
    return graph, EpochSchedule(eps, eps.copy(), eps_neg, eps_neg.copy())


# --------------------------------------------------------------------------
# optimization


class EmbeddingOptimizer:
    """Runs the SGD epochs and dispatches per-epoch callbacks.

    Callbacks are called as ``callback(epoch, embedding)`` on the calling
    thread after each epoch's updates have been applied. ``embedding`` is
    the live float32 array; in-place edits carry into the next epoch.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self._callbacks = []
        self._running = False

    def register_epoch_callback(self, callback):
        if self._running:
            raise RuntimeError("cannot register a callback while optimization is running")
        self._callbacks.append(callback)

    def optimize(self, embedding, graph, schedule, reference=None, move_reference=True,
                 callback=None, edge_keys=None):
        """Optimize ``embedding`` over the edges of ``graph``.

        Parameters
        ----------
        embedding: array (n, dim)
            Start layout; the input array is not modified.
        graph: FuzzyGraph or CooMatrix
            Rows index ``embedding`` (the free side), columns index
            ``reference``.
        schedule: EpochSchedule
            Matching ``graph`` entry for entry (from :func:`build_schedule`).
        reference: array (n_ref, dim), optional
            Fixed layout the columns refer to. ``None`` means the embedding
            itself, which is then also the pool for negative samples.
        move_reference: bool
            Move the column endpoint of positive edges too. Only allowed when
            ``reference`` is None.
        callback: callable, optional
            Extra per-epoch callback for this run.
        edge_keys: uint64 array, optional
            Stable per-edge keys for the negative sampler; defaults to the
            edge position.

        Returns
        -------
        float32 array (n, dim)
        """
        cfg = self.cfg
        if cfg.n_epochs is None or cfg.a is None or cfg.b is None:
            raise ValueError("resolve() the optimizer config before optimizing")
        m = _coo(graph)
        emb = np.array(embedding, dtype=np.float32, copy=True)
        same = reference is None
        if same:
            ref = emb
        else:
            if move_reference:
                raise ValueError("move_reference requires the reference to be the embedding")
            ref = np.asarray(reference, dtype=np.float32)
            if ref.shape[1] != emb.shape[1]:
                raise ValueError("embedding and reference dimensions differ")
        if m.shape != (emb.shape[0], ref.shape[0]):
            raise ValueError(f"graph shape {m.shape} does not match layouts "
                             f"({emb.shape[0]}, {ref.shape[0]})")
        if schedule.epochs_per_sample.shape[0] != m.nnz:
            raise ValueError("schedule does not match graph")
        if edge_keys is None:
            edge_keys = np.arange(m.nnz, dtype=np.uint64)
        edge_keys = np.asarray(edge_keys, dtype=np.uint64)

        callbacks = list(self._callbacks) + ([callback] if callback is not None else [])
        sched = schedule.copy()
        head = m.rows
        tail = m.cols
        self._running = True
        try:
            if cfg.mode == "async":
                step = _AsyncEpoch(emb, ref, head, tail, edge_keys, sched, cfg,
                                   move_reference, same)
            else:
                step = _DeterministicEpoch(emb, ref, head, tail, edge_keys, sched, cfg,
                                           move_reference, same)
            with ThreadPoolExecutor(cfg.n_threads) if cfg.n_threads > 1 else _NoPool() as pool:
                for epoch in range(cfg.n_epochs):
                    alpha = learning_rate(cfg.initial_lr, epoch, cfg.n_epochs)
                    step(epoch, alpha, pool)
                    if not np.isfinite(emb).all():
                        raise FloatingPointError(f"non-finite embedding at epoch {epoch}")
                    for cb in callbacks:
                        cb(epoch, emb)
        finally:
            self._running = False
        return emb


def optimize(embedding, graph, schedule, cfg, reference=None, move_reference=True,
             callback=None, edge_keys=None):
    """Functional form of :meth:`EmbeddingOptimizer.optimize`."""
    return EmbeddingOptimizer(cfg).optimize(
        embedding, graph, schedule, reference=reference, move_reference=move_reference,
        callback=callback, edge_keys=edge_keys,
    )


class _NoPool:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


def _ranges(n, parts):
    bounds = np.linspace(0, n, parts + 1).astype(np.int64)
    return list(zip(bounds[:-1], bounds[1:]))


class _AsyncEpoch:
    def __init__(self, emb, ref, head, tail, keys, sched, cfg, move_reference, same):
        from . import _kernels

        self.kernel = _kernels.sgd_edge_range
        self.emb, self.ref = emb, ref
        self.head, self.tail, self.keys = head, tail, keys
        self.sched, self.cfg = sched, cfg
        self.move_reference, self.same = move_reference, same
        self.stream_key = _rng.hash_counters(cfg.seed, _rng.STREAM_NEGATIVE)[0]
        self.parts = _ranges(head.shape[0], cfg.n_threads)

    def _run(self, bounds, epoch, alpha):
        s, c = self.sched, self.cfg
        self.kernel(
            self.emb, self.ref, self.head, self.tail, self.keys,
            s.epochs_per_sample, s.next_sample_epoch,
            s.epochs_per_negative_sample, s.next_negative_epoch,
            bounds[0], bounds[1], float(epoch + 1), epoch, alpha,
            c.a, c.b, c.clip, self.stream_key, c.n_negative_samples,
            self.move_reference, self.same,
        )

    def __call__(self, epoch, alpha, pool):
        if pool is None:
            self._run(self.parts[0], epoch, alpha)
        else:
            list(pool.map(lambda r: self._run(r, epoch, alpha), self.parts))


class _DeterministicEpoch:
    def __init__(self, emb, ref, head, tail, keys, sched, cfg, move_reference, same):
        self.emb, self.ref = emb, ref
        self.head, self.tail, self.keys = head, tail, keys
        self.sched, self.cfg = sched, cfg
        self.move_reference, self.same = move_reference, same

    def _chunk(self, due, epoch, alpha, cur64, ref64):
        """Targets and float64 contributions for one chunk of due edges.

        Contributions come out grouped per edge (attraction on the row
        endpoint, then on the column endpoint, then each negative sample),
        in edge order. A vertex therefore always accumulates its updates in
        the same sequence, however the due edges are split into chunks.
        """
        c, s = self.cfg, self.sched
        t = float(epoch + 1)
        i = self.head[due]
        j = self.tail[due]
        pos = np.arange(due.shape[0])
        g = attractive_update(cur64[i], ref64[j], c.a, c.b, c.clip) * alpha
        targets = [i]
        contribs = [g]
        owners = [pos]
        slots = [np.zeros_like(pos)]
        if self.move_reference:
            targets.append(j)
            contribs.append(-g)
            owners.append(pos)
            slots.append(np.ones_like(pos))

        if c.n_negative_samples > 0:
            n_neg = ((t - s.next_negative_epoch[due]) / s.epochs_per_negative_sample[due])
            n_neg = np.maximum(n_neg.astype(np.int64), 0)
            total = int(n_neg.sum())
            if total:
                owner = np.repeat(pos, n_neg)
                # sample index within each edge's run of draws
                starts = np.cumsum(n_neg) - n_neg
                sample = np.arange(total) - np.repeat(starts, n_neg)
                h = _rng.hash_counters(c.seed, _rng.STREAM_NEGATIVE,
                                       self.keys[due][owner], epoch, sample)
                k = (h % np.uint64(self.ref.shape[0])).astype(np.int64)
                src = i[owner]
                if self.same:
                    ok = k != src
                    src, k, owner, sample = src[ok], k[ok], owner[ok], sample[ok]
                targets.append(src)
                contribs.append(repulsive_update(cur64[src], ref64[k], c.a, c.b, c.clip) * alpha)
                owners.append(owner)
                slots.append(sample + 2)
        order = np.lexsort((np.concatenate(slots), np.concatenate(owners)))
        return np.concatenate(targets)[order], np.concatenate(contribs)[order]

    def __call__(self, epoch, alpha, pool):
        s = self.sched
        t = float(epoch + 1)
        due = np.flatnonzero(s.next_sample_epoch <= t)
        if due.size == 0:
            return
        cur64 = self.emb.astype(np.float64)
        ref64 = cur64 if self.same else self.ref.astype(np.float64)

        # chunk boundaries depend only on the due-edge list, never on the
        # worker count, so every chunk sees identical inputs
        chunks = [due[o:o + _CHUNK] for o in range(0, due.size, _CHUNK)]
        if pool is None:
            parts = [self._chunk(ch, epoch, alpha, cur64, ref64) for ch in chunks]
        else:
            parts = list(pool.map(lambda ch: self._chunk(ch, epoch, alpha, cur64, ref64), chunks))
        targets = np.concatenate([p[0] for p in parts])
        contribs = np.concatenate([p[1] for p in parts])

        n, dim = self.emb.shape
        acc = np.empty((n, dim), dtype=np.float64)
        for d in range(dim):
            acc[:, d] = np.bincount(targets, weights=contribs[:, d], minlength=n)
        self.emb[...] = (cur64 + acc).astype(np.float32)

        if self.cfg.n_negative_samples > 0:
            n_neg = np.maximum(
                ((t - s.next_negative_epoch[due]) / s.epochs_per_negative_sample[due]).astype(np.int64), 0)
            s.next_negative_epoch[due] += n_neg * s.epochs_per_negative_sample[due]
        s.next_sample_epoch[due] += s.epochs_per_sample[due]
