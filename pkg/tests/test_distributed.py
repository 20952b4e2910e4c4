import socket
import subprocess
import sys
import threading

import numpy as np
import pytest

from conftest import blobs
from umapkit.distributed import (
    ERROR,
    LOAD_MODEL,
    RESULT,
    SHUTDOWN,
    TRANSFORM,
    WireFrame,
    Worker,
    WorkerError,
    plan_partitions,
    recv_frame,
    run_inference,
    sample_and_infer,
    sample_rows,
    send_frame,
    serve_worker,
    shutdown_worker,
    train_on_sample,
)
from umapkit.io import FormatError, matrix_from_bytes, matrix_to_bytes
from umapkit.model import UmapParams, fit, model_to_bytes, transform
from umapkit.optimizer import OptimizerConfig


def det_params(n_epochs=60):
    return UmapParams(optimizer=OptimizerConfig(n_epochs=n_epochs, mode="deterministic"))


@pytest.fixture(scope="module")
def data():
    return blobs(400, 6, 3, seed=4)


@pytest.fixture(scope="module")
def model(data):
    m, _ = train_on_sample(data[0], params=det_params(), fraction=0.5, seed=1)
    return m


def start_worker():
    ready = threading.Event()
    info = {}

    def on_ready(host, port):
        info["addr"] = f"{host}:{port}"
        ready.set()

    t = threading.Thread(target=serve_worker, args=("127.0.0.1:0", on_ready), daemon=True)
    t.start()
    assert ready.wait(10)
    return info["addr"], t


@pytest.fixture(scope="module")
def workers():
    started = [start_worker() for _ in range(4)]
    yield [a for a, _ in started]
    for addr, t in started:
        shutdown_worker(addr)
        t.join(10)


def test_frame_encoding():
    f = WireFrame(TRANSFORM, b"abc")
    raw = f.encode()
    assert raw[:12] == (2).to_bytes(4, "little") + (3).to_bytes(8, "little")
    assert WireFrame.decode(raw) == f and f.length == 3
    with pytest.raises(FormatError):
        WireFrame.decode(raw[:-1])
    with pytest.raises(FormatError):
        WireFrame.decode(raw[:5])


@pytest.mark.parametrize("n,w,sizes", [(10, 3, [4, 3, 3]), (5, 8, [1] * 5 + [0] * 3),
                                       (7, 1, [7]), (0, 2, [0, 0])])
def test_plan_partitions(n, w, sizes):
    plan = plan_partitions(n, w)
    assert plan.sizes() == sizes
    stops = [a[2] for a in plan.assignments]
    starts = [a[1] for a in plan.assignments]
    assert starts[0] == 0 and stops[-1] == n and starts[1:] == stops[:-1]
    assert [a[0] for a in plan.assignments] == list(range(w))


def test_plan_rejects_zero_workers():
    with pytest.raises(ValueError):
        plan_partitions(3, 0)


def test_sample_rows():
    ids = sample_rows(1000, 0.03, seed=5)
    assert ids.size == 30 and (np.diff(ids) > 0).all()
    assert np.array_equal(ids, sample_rows(1000, 0.03, seed=5))
    assert not np.array_equal(ids, sample_rows(1000, 0.03, seed=6))
    assert np.array_equal(sample_rows(10, 1.0, 0), np.arange(10))
    for bad in (0.0, 1.5):
        with pytest.raises(ValueError):
            sample_rows(10, bad, 0)


def test_full_fraction_equals_plain_fit(data):
    x = data[0][:150]
    m, ids = train_on_sample(x, params=det_params(30), fraction=1.0, seed=3)
    assert np.array_equal(ids, np.arange(150))
    assert m.embedding.tobytes() == fit(x, params=det_params(30)).embedding.tobytes()


def test_sample_too_small(data):
    with pytest.raises(ValueError, match="too small"):
        train_on_sample(data[0], params=det_params(), fraction=0.03, seed=0)


def test_worker_protocol(model):
    w = Worker()
    reply, keep = w.handle(WireFrame(TRANSFORM, matrix_to_bytes(model.train_data[:2])))
    assert reply.tag == ERROR and b"no model loaded" in reply.payload and keep
    reply, _ = w.handle(WireFrame(99))
    assert reply.tag == ERROR and b"unknown tag" in reply.payload
    reply, _ = w.handle(WireFrame(LOAD_MODEL, b"junk"))
    assert reply.tag == ERROR
    reply, _ = w.handle(WireFrame(LOAD_MODEL, model_to_bytes(model)))
    assert reply.tag == RESULT
    reply, _ = w.handle(WireFrame(TRANSFORM, matrix_to_bytes(model.train_data[:2])))
    assert reply.tag == RESULT
    out, _ = matrix_from_bytes(reply.payload)
    assert out.shape == (2, 2)
    reply, _ = w.handle(WireFrame(TRANSFORM, b"UMD1"))
    assert reply.tag == ERROR
    reply, keep = w.handle(WireFrame(SHUTDOWN))
    assert reply.tag == RESULT and not keep


def test_inprocess_single_worker_equals_transform(model, data):
    x = data[0]
    expect = transform(model, x)
    assert run_inference(model, x, plan_partitions(len(x), 1)).tobytes() == expect.tobytes()
    assert run_inference(model, x, plan_partitions(len(x), 4)).tobytes() == expect.tobytes()
    assert run_inference(model, x, plan_partitions(len(x), 7)).tobytes() == expect.tobytes()


def test_socket_matches_inprocess(model, data, workers):
    x = data[0]
    expect = transform(model, x)
    got = run_inference(model, x, plan_partitions(len(x), 4), "socket", workers)
    assert got.tobytes() == expect.tobytes()
    # workers keep serving new connections
    again = run_inference(model, x[:50], plan_partitions(50, 2), "socket", workers[:2])
    assert again.tobytes() == expect[:50].tobytes()


def test_socket_worker_error_frame(model, workers):
    with socket.create_connection(workers[0].rsplit(":", 1)) as s:
        send_frame(s, WireFrame(99))
        reply = recv_frame(s)
        assert reply.tag == ERROR and b"unknown tag 99" in reply.payload
        # connection stays usable
        send_frame(s, WireFrame(LOAD_MODEL, model_to_bytes(model)))
        assert recv_frame(s).tag == RESULT


def test_dead_worker_is_named(model, data, workers):
    # worker 2 accepts the connection and hangs up after the model arrives
    srv = socket.create_server(("127.0.0.1", 0))
    port = srv.getsockname()[1]

    def flaky():
        conn, _ = srv.accept()
        recv_frame(conn)
        conn.close()
        srv.close()

    threading.Thread(target=flaky, daemon=True).start()
    addrs = list(workers[:2]) + [f"127.0.0.1:{port}"]
    with pytest.raises(WorkerError, match="worker 2") as info:
        run_inference(model, data[0], plan_partitions(len(data[0]), 3), "socket", addrs)
    assert info.value.worker_id == 2


def test_unreachable_worker(model, data):
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(WorkerError, match="worker 0"):
        run_inference(model, data[0][:10], plan_partitions(10, 1), "socket", [f"127.0.0.1:{port}"],
                      timeout=2)


def test_killed_worker_process(model, data):
    proc = subprocess.Popen([sys.executable, "-m", "umapkit", "worker", "--bind", "127.0.0.1:0"],
                            stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        addr = line.strip().rsplit(" ", 1)[-1]
        proc.kill()
        proc.wait(10)
        with pytest.raises(WorkerError, match="worker 0"):
            run_inference(model, data[0][:20], plan_partitions(20, 1), "socket", [addr], timeout=5)
    finally:
        if proc.poll() is None:
            proc.kill()


def test_run_inference_argument_checks(model, data):
    with pytest.raises(ValueError):
        run_inference(model, data[0], plan_partitions(10, 2))
    with pytest.raises(ValueError):
        run_inference(model, data[0], plan_partitions(len(data[0]), 2), "carrier-pigeon")
    with pytest.raises(ValueError):
        run_inference(model, data[0], plan_partitions(len(data[0]), 2), "socket", ["a:1"])


def test_sample_and_infer_assembles_rows(data):
    x = data[0]
    emb, m, ids = sample_and_infer(x, params=det_params(), fraction=0.5, seed=1, n_workers=3)
    assert np.array_equal(emb[ids], m.embedding)
    rest = np.setdiff1d(np.arange(len(x)), ids)
    assert emb[rest].tobytes() == transform(m, x[rest]).tobytes()
