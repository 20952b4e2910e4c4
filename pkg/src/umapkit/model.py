"""End-to-end fit/transform pipeline and model files."""

import math
import struct
import time
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import _rng
from .fuzzy import (
    fuzzy_union,
    membership_strengths,
    smooth_knn,
    supervised_adjust,
)
from .initialization import InitConfig, random_init, spectral_init
from .io import FormatError, atomic_write, matrix_from_bytes, matrix_to_bytes
from .knn import build_index, query, validate_precomputed
from .optimizer import EmbeddingOptimizer, OptimizerConfig, build_schedule
from .sparse import build_csr, normalize_rows

MODEL_MAGIC = b"UMM1"
MODEL_VERSION = 1

_HEADER = struct.Struct("<4sII")
_PARAMS = struct.Struct("<IIBBBxIIIddddddQddd")
_METRIC_CODES = {"euclidean": 0, "sqeuclidean": 1}
_INIT_CODES = {"random": 0, "spectral": 1}
_MODE_CODES = {"async": 0, "deterministic": 1}


class ModelFormatError(FormatError):
    pass


@dataclass(frozen=True)
class UmapParams:
    n_neighbors: int = 15
    n_components: int = 2
    metric: str = "euclidean"
    init: str = "spectral"
    init_scale: float = 10.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    far_dist: float = 5.0
    unknown_dist: float = 1.0

    def __post_init__(self):
        if self.n_neighbors < 2:
            raise ValueError("n_neighbors must be >= 2")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.metric not in _METRIC_CODES:
            raise ValueError(f"unknown metric {self.metric!r}")
        # validates strategy and scale
        self.init_config()

    def init_config(self):
        return InitConfig(self.init, self.n_components, self.optimizer.seed, self.init_scale)


@dataclass(frozen=True)
class UmapModel:
    """A fitted model: resolved parameters, training data and layout.

    ``params.optimizer`` carries the resolved epoch count and kernel
    coefficients ``a``/``b``.
    """

    params: UmapParams
    train_data: np.ndarray
    embedding: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray

    @property
    def a(self):
        return self.params.optimizer.a

    @property
    def b(self):
        return self.params.optimizer.b


class _Timer:
    def __init__(self, timings):
        self.timings = timings

    def __call__(self, stage):
        timer = self

        class _Stage:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                if timer.timings is not None:
                    timer.timings[stage] = timer.timings.get(stage, 0.0) + time.perf_counter() - self.t0

        return _Stage()


def _as_data(data):
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("input contains non-finite values")
    return data


def fit(data, labels=None, params=None, precomputed=None, callbacks=(), timings=None):
    """Fit a model.

    Parameters
    ----------
    data: array (n, n_features)
    labels: int array (n,), optional
        Class labels (-1 = unknown). When given, edge weights are damped by
        label agreement before the layout is optimized.
    params: UmapParams
    precomputed: KnnGraph, optional
        Neighbor graph of ``data`` against itself (self excluded), used in
        place of the internal exact search.
    callbacks: sequence of callables
        Per-epoch optimizer callbacks ``cb(epoch, embedding)``.
    timings: dict, optional
        Filled with seconds spent in the ``knn``, ``fuzzy``, ``init`` and
        ``optimize`` stages.

    Returns
    -------
    UmapModel
    """
    params = params or UmapParams()
    data = _as_data(data)
    n = data.shape[0]
    k = params.n_neighbors
    if n <= k:
        raise ValueError(f"need more rows ({n}) than n_neighbors ({k})")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (n,):
            raise ValueError(f"{labels.shape[0]} labels for {n} rows")
    cfg = params.optimizer.resolve(n)
    params = replace(params, optimizer=cfg)
    stage = _Timer(timings)

    if precomputed is not None:
        knn = validate_precomputed(precomputed, n, k)
        if timings is not None:
            timings["knn"] = 0.0
    else:
        with stage("knn"):
            knn = query(build_index(data, params.metric), data, k, exclude_self=True,
                        n_threads=cfg.n_threads)

    with stage("fuzzy"):
        smoothing = smooth_knn(knn)
        graph = fuzzy_union(membership_strengths(knn, smoothing))
        if labels is not None:
            graph = supervised_adjust(graph, labels, params.far_dist, params.unknown_dist)

    with stage("init"):
        init_cfg = params.init_config()
        if init_cfg.strategy == "spectral":
            embedding, _ = spectral_init(graph, init_cfg)
        else:
            embedding = random_init(n, init_cfg)

    with stage("optimize"):
        if cfg.n_epochs > 0 and graph.graph.nnz:
            graph, schedule = build_schedule(graph, cfg.n_epochs, cfg.n_negative_samples)
            optimizer = EmbeddingOptimizer(cfg)
            for cb in callbacks:
                optimizer.register_epoch_callback(cb)
            embedding = optimizer.optimize(embedding, graph, schedule, move_reference=True)

    return UmapModel(
        params=params,
        train_data=data,
        embedding=embedding,
        rho=smoothing.rho.astype(np.float32),
        sigma=smoothing.sigma.astype(np.float32),
    )


def transform_epochs(model):
    return max(1, math.ceil(model.params.optimizer.n_epochs / 3))


def transform(model, queries, precomputed=None, n_epochs=None, n_threads=None, timings=None):
    """Embed new rows against the frozen training layout.

    Each query starts at the membership-weighted average of its neighbors'
    trained positions and is refined for ``n_epochs`` epochs (default
    ``ceil(train_epochs / 3)``) with only the query side moving and negative
    samples drawn from the training layout. A row's result depends only on
    the model and that row.

    Parameters
    ----------
    model: UmapModel
    queries: array (n_queries, n_features)
    precomputed: KnnGraph, optional
        Neighbors of the queries among the training rows.
    n_epochs: int, optional
        Override the refinement budget; 0 returns the initialization.
    n_threads: int, optional
        Override the model's worker count.
    """
    queries = _as_data(queries)
    train = model.train_data
    if queries.shape[1] != train.shape[1]:
        raise ValueError(
            f"dimension mismatch: queries have {queries.shape[1]} columns, model expects {train.shape[1]}"
        )
    params = model.params
    cfg = params.optimizer
    if n_threads is not None:
        cfg = replace(cfg, n_threads=n_threads)
    k = params.n_neighbors
    n_q = queries.shape[0]
    dim = model.embedding.shape[1]
    if n_q == 0:
        return np.zeros((0, dim), dtype=np.float32)
    stage = _Timer(timings)

    if precomputed is not None:
        knn = validate_precomputed(precomputed, n_q, k, n_reference=train.shape[0])
        if timings is not None:
            timings["knn"] = 0.0
    else:
        with stage("knn"):
            knn = query(build_index(train, params.metric), queries, k, n_threads=cfg.n_threads)

    with stage("fuzzy"):
        smoothing = smooth_knn(knn)
        weights = membership_strengths(knn, smoothing, n_cols=train.shape[0], skip_self=False)

    with stage("init"):
        norm = normalize_rows(weights, build_csr(weights), "l1")
        w = norm.vals.astype(np.float64)
        ref = model.embedding.astype(np.float64)
        init = np.empty((n_q, dim), dtype=np.float64)
        for d in range(dim):
            init[:, d] = np.bincount(norm.rows, weights=w * ref[norm.cols, d], minlength=n_q)
        init = init.astype(np.float32)

    epochs = transform_epochs(model) if n_epochs is None else n_epochs
    if epochs <= 0:
        return init
    with stage("optimize"):
        graph, schedule = build_schedule(weights, epochs, cfg.n_negative_samples)
        # keys from row content and neighbor id keep each row's negative
        # samples independent of its position in the batch
        keys = _rng.hash_counters(0, 0, _rng.row_keys(queries)[graph.rows], graph.cols)
        optimizer = EmbeddingOptimizer(replace(cfg, n_epochs=epochs))
        return optimizer.optimize(init, graph, schedule, reference=model.embedding,
                                  move_reference=False, edge_keys=keys)


# --------------------------------------------------------------------------
# serialization


def _pack_params(p):
    o = p.optimizer
    return _PARAMS.pack(
        p.n_neighbors, p.n_components, _METRIC_CODES[p.metric], _INIT_CODES[p.init],
        _MODE_CODES[o.mode], o.n_epochs, o.n_negative_samples, o.n_threads,
        o.initial_lr, o.min_dist, o.spread, o.a, o.b, o.clip, o.seed & (2**64 - 1),
        p.init_scale, p.far_dist, p.unknown_dist,
    )


def _unpack_params(buf):
    (n_neighbors, n_components, metric, init, mode, n_epochs, n_neg, n_threads,
     lr, min_dist, spread, a, b, clip, seed, init_scale, far, unknown) = _PARAMS.unpack_from(buf, 0)
    inv = lambda table, code: {v: k for k, v in table.items()}[code]  # noqa: E731
    try:
        opt = OptimizerConfig(
            n_epochs=n_epochs, initial_lr=lr, n_negative_samples=n_neg, min_dist=min_dist,
            spread=spread, a=a, b=b, clip=clip, seed=seed, mode=inv(_MODE_CODES, mode),
            n_threads=n_threads,
        )
        return UmapParams(
            n_neighbors=n_neighbors, n_components=n_components,
            metric=inv(_METRIC_CODES, metric), init=inv(_INIT_CODES, init),
            init_scale=init_scale, optimizer=opt, far_dist=far, unknown_dist=unknown,
        )
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model parameters: {exc}") from None


def model_to_bytes(model):
    payload = b"".join([
        _pack_params(model.params),
        matrix_to_bytes(model.train_data),
        matrix_to_bytes(model.embedding),
        np.asarray(model.rho, dtype="<f4").tobytes(),
        np.asarray(model.sigma, dtype="<f4").tobytes(),
    ])
    return _HEADER.pack(MODEL_MAGIC, MODEL_VERSION, zlib.crc32(payload)) + payload


def model_from_bytes(buf):
    buf = bytes(buf)
    if len(buf) < _HEADER.size:
        raise ModelFormatError("truncated model header")
    magic, version, crc = _HEADER.unpack_from(buf, 0)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}, expected UMM1")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version} (expected {MODEL_VERSION})")
    payload = buf[_HEADER.size:]
    if zlib.crc32(payload) != crc:
        raise ModelFormatError("model checksum mismatch (file corrupt or truncated)")
    try:
        params = _unpack_params(payload)
        train, off = matrix_from_bytes(payload, _PARAMS.size)
        emb, off = matrix_from_bytes(payload, off)
        n = train.shape[0]
        if emb.shape[0] != n or off + 8 * n != len(payload):
            raise FormatError("inconsistent section sizes")
        rho = np.frombuffer(payload, dtype="<f4", count=n, offset=off).astype(np.float32)
        sigma = np.frombuffer(payload, dtype="<f4", count=n, offset=off + 4 * n).astype(np.float32)
    except (FormatError, struct.error) as exc:
        raise ModelFormatError(f"corrupt model: {exc}") from None
    return UmapModel(params, train, emb, rho, sigma)


def save_model(model, path):
    atomic_write(path, model_to_bytes(model))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


# --------------------------------------------------------------------------
# estimator


class UMAP:
    """scikit-learn style wrapper around :func:`fit` and :func:`transform`.

    Every ``fit``/``fit_transform``/``transform`` call accepts an optional
    ``knn_graph`` to skip the neighbor search.
    """

    def __init__(self, n_neighbors=15, n_components=2, metric="euclidean", min_dist=0.1,
                 spread=1.0, n_epochs=None, learning_rate=1.0, negative_sample_rate=5,
                 init="spectral", random_state=0, deterministic=False, n_threads=1,
                 target_far_dist=5.0, target_unknown_dist=1.0):
        self.n_neighbors = n_neighbors
        self.n_components = n_components
        self.metric = metric
        self.min_dist = min_dist
        self.spread = spread
        self.n_epochs = n_epochs
        self.learning_rate = learning_rate
        self.negative_sample_rate = negative_sample_rate
        self.init = init
        self.random_state = random_state
        self.deterministic = deterministic
        self.n_threads = n_threads
        self.target_far_dist = target_far_dist
        self.target_unknown_dist = target_unknown_dist
        self._callbacks = []
        self.model_ = None

    def _params(self):
        opt = OptimizerConfig(
            n_epochs=self.n_epochs, initial_lr=self.learning_rate,
            n_negative_samples=self.negative_sample_rate, min_dist=self.min_dist,
            spread=self.spread, seed=self.random_state,
            mode="deterministic" if self.deterministic else "async", n_threads=self.n_threads,
        )
        return UmapParams(
            n_neighbors=self.n_neighbors, n_components=self.n_components, metric=self.metric,
            init=self.init, optimizer=opt, far_dist=self.target_far_dist,
            unknown_dist=self.target_unknown_dist,
        )

    def register_epoch_callback(self, callback):
        self._callbacks.append(callback)
        return self

    def fit(self, X, y=None, knn_graph=None):
        self.model_ = fit(X, labels=y, params=self._params(), precomputed=knn_graph,
                          callbacks=self._callbacks)
        self.embedding_ = self.model_.embedding
        return self

    def fit_transform(self, X, y=None, knn_graph=None):
        return self.fit(X, y, knn_graph).embedding_

    def transform(self, X, knn_graph=None):
        if self.model_ is None:
            raise RuntimeError("call fit() before transform()")
        return transform(self.model_, X, precomputed=knn_graph)
