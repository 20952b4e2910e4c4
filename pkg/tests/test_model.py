import math
import struct

import numpy as np
import pytest

from conftest import blobs
from umapkit import UMAP
from umapkit.fuzzy import membership_strengths, smooth_knn
from umapkit.knn import build_index, query
from umapkit.model import (
    ModelFormatError,
    UmapModel,
    UmapParams,
    fit,
    load_model,
    model_from_bytes,
    model_to_bytes,
    save_model,
    transform,
    transform_epochs,
)
from umapkit.optimizer import OptimizerConfig
from umapkit.trust import TrustConfig, trustworthiness


def det_params(n_epochs=150, seed=0, **kw):
    return UmapParams(optimizer=OptimizerConfig(n_epochs=n_epochs, seed=seed,
                                                mode="deterministic"), **kw)


@pytest.fixture(scope="module")
def data():
    x, y = blobs(300, 8, 3, seed=1)
    return x, y


@pytest.fixture(scope="module")
def model(data):
    return fit(data[0][:240], params=det_params())


def test_params_validation():
    with pytest.raises(ValueError):
        UmapParams(n_neighbors=1)
    with pytest.raises(ValueError):
        UmapParams(n_components=0)
    with pytest.raises(ValueError):
        UmapParams(metric="cosine")
    with pytest.raises(ValueError):
        UmapParams(init="pca")


def test_two_cluster_fit_is_trustworthy():
    x, _ = blobs(200, 10, 2, seed=3)
    m = fit(x, params=UmapParams(optimizer=OptimizerConfig(seed=3)))
    assert m.embedding.shape == (200, 2)
    assert trustworthiness(x, m.embedding, TrustConfig(15)) >= 0.90


def test_model_fields(model):
    assert isinstance(model, UmapModel)
    n = model.train_data.shape[0]
    assert model.embedding.shape == (n, 2) and model.embedding.dtype == np.float32
    assert np.isfinite(model.embedding).all()
    assert model.rho.shape == model.sigma.shape == (n,)
    assert model.params.optimizer.n_epochs == 150
    assert model.a == pytest.approx(1.577, abs=1e-3)


def test_too_few_rows():
    with pytest.raises(ValueError, match="n_neighbors"):
        fit(np.random.default_rng(0).normal(size=(15, 3)), params=UmapParams())


def test_bad_inputs():
    with pytest.raises(ValueError):
        fit(np.full((30, 2), np.nan))
    with pytest.raises(ValueError):
        fit(np.zeros(30))
    x, _ = blobs(40, 3, 2)
    with pytest.raises(ValueError):
        fit(x, labels=np.zeros(3), params=det_params(5))


def test_precomputed_graph_is_bit_identical(data):
    x = data[0][:200]
    p = det_params(100)
    timings = {}
    plain = fit(x, params=p)
    g = query(build_index(x), x, p.n_neighbors, exclude_self=True)
    pre = fit(x, params=p, precomputed=g, timings=timings)
    assert plain.embedding.tobytes() == pre.embedding.tobytes()
    assert timings["knn"] == 0.0
    assert set(timings) == {"knn", "fuzzy", "init", "optimize"}


def test_random_init_and_supervised(data):
    x, y = data
    m = fit(x, labels=y, params=det_params(30, init="random"))
    assert np.isfinite(m.embedding).all()


def test_transform_zero_epochs_is_weighted_average(model):
    q = model.train_data[:5]
    out = transform(model, q, n_epochs=0)
    k = model.params.n_neighbors
    g = query(build_index(model.train_data), q, k)
    # each query's duplicate sits at distance 0, below rho, so it carries weight 1
    assert (g.indices[:, 0] == np.arange(5)).all() and (g.distances[:, 0] == 0).all()
    w = membership_strengths(g, smooth_knn(g), n_cols=model.train_data.shape[0], skip_self=False)
    dense = w.to_dense().astype(np.float64)
    assert (dense[np.arange(5), np.arange(5)] == 1.0).all()
    dense /= dense.sum(1, keepdims=True)
    expect = dense @ model.embedding.astype(np.float64)
    assert np.allclose(out, expect, atol=1e-5)


def test_transform_leaves_model_untouched(model, data):
    before = model.embedding.tobytes(), model.train_data.tobytes()
    transform(model, data[0][240:])
    assert (model.embedding.tobytes(), model.train_data.tobytes()) == before


def test_transform_row_independence(model, data):
    q = data[0][240:]
    whole = transform(model, q)
    parts = np.vstack([transform(model, q[:17]), transform(model, q[17:])])
    assert whole.tobytes() == parts.tobytes()
    perm = np.random.default_rng(0).permutation(len(q))
    assert transform(model, q[perm]).tobytes() == whole[perm].tobytes()
    assert transform(model, q, n_threads=4).tobytes() == whole.tobytes()


def test_transform_places_queries_near_their_cluster(model, data):
    x, y = data
    out = transform(model, x[240:])
    centers = np.array([model.embedding[y[:240] == c].mean(0) for c in range(3)])
    nearest = np.argmin(((out[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
    assert (nearest == y[240:]).mean() > 0.95


def test_transform_epochs_budget(model):
    assert transform_epochs(model) == math.ceil(150 / 3)
    short = fit(model.train_data, params=det_params(1))
    assert transform_epochs(short) == 1


def test_transform_errors_and_empty(model):
    with pytest.raises(ValueError, match="dimension"):
        transform(model, np.zeros((2, 3)))
    assert transform(model, np.zeros((0, 8))).shape == (0, 2)


def test_transform_precomputed(model, data):
    q = data[0][240:260]
    g = query(build_index(model.train_data), q, model.params.n_neighbors)
    assert transform(model, q, precomputed=g).tobytes() == transform(model, q).tobytes()


def test_save_load_round_trip(model, data, tmp_path):
    path = tmp_path / "m.umm"
    save_model(model, path)
    back = load_model(path)
    assert back.params == model.params
    for f in ("train_data", "embedding", "rho", "sigma"):
        assert getattr(back, f).tobytes() == getattr(model, f).tobytes()
    q = data[0][240:]
    assert transform(back, q).tobytes() == transform(model, q).tobytes()


def test_truncated_model(model):
    blob = model_to_bytes(model)
    with pytest.raises(ModelFormatError, match="checksum"):
        model_from_bytes(blob[:-10])
    with pytest.raises(ModelFormatError):
        model_from_bytes(blob[:6])


def test_corrupt_byte(model):
    blob = bytearray(model_to_bytes(model))
    blob[100] ^= 0xFF
    with pytest.raises(ModelFormatError, match="checksum"):
        model_from_bytes(bytes(blob))


def test_version_and_magic(model):
    blob = bytearray(model_to_bytes(model))
    bumped = blob[:4] + struct.pack("<I", 2) + blob[8:]
    with pytest.raises(ModelFormatError, match="version"):
        model_from_bytes(bytes(bumped))
    with pytest.raises(ModelFormatError, match="magic"):
        model_from_bytes(b"XXXX" + bytes(blob[4:]))


def test_estimator(data):
    x, y = data
    est = UMAP(n_epochs=40, deterministic=True, random_state=2)
    with pytest.raises(RuntimeError):
        est.transform(x)
    seen = []
    est.register_epoch_callback(lambda e, emb: seen.append(e))
    emb = est.fit_transform(x[:240])
    assert emb.shape == (240, 2) and len(seen) == 40
    assert est.transform(x[240:]).shape == (60, 2)
    g = query(build_index(x[:240]), x[:240], 15, exclude_self=True)
    again = UMAP(n_epochs=40, deterministic=True, random_state=2).fit(x[:240], knn_graph=g)
    assert again.embedding_.tobytes() == emb.tobytes()
    sup = UMAP(n_epochs=20, deterministic=True).fit(x, y)
    assert sup.embedding_.shape == (300, 2)
