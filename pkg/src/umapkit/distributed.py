"""Coordinator/worker inference over a trained model.

A model is trained on a row sample, shipped to every worker as one blob,
and the remaining rows are transformed in contiguous partitions whose
results are gathered back in row order. Workers speak a length-prefixed
frame protocol, either over TCP or through an in-process loop that runs the
same encode/decode path.
"""

import logging
import socket
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _rng
from .io import FormatError, matrix_from_bytes, matrix_to_bytes
from .model import fit, model_from_bytes, model_to_bytes, transform

logger = logging.getLogger(__name__)

LOAD_MODEL = 1
TRANSFORM = 2
RESULT = 3
ERROR = 4
SHUTDOWN = 5
TAGS = (LOAD_MODEL, TRANSFORM, RESULT, ERROR, SHUTDOWN)

FRAME_HEADER = struct.Struct("<IQ")
DEFAULT_TIMEOUT = 600.0


class WorkerError(RuntimeError):
    def __init__(self, worker_id, message):
        super().__init__(f"worker {worker_id}: {message}")
        self.worker_id = worker_id


@dataclass(frozen=True)
class WireFrame:
    tag: int
    payload: bytes = b""

    @property
    def length(self):
        return len(self.payload)

    def encode(self):
        return FRAME_HEADER.pack(self.tag, len(self.payload)) + self.payload

    @classmethod
    def decode(cls, buf):
        if len(buf) < FRAME_HEADER.size:
            raise FormatError("truncated frame header")
        tag, length = FRAME_HEADER.unpack_from(buf, 0)
        body = bytes(buf[FRAME_HEADER.size:])
        if len(body) != length:
            raise FormatError(f"frame length {length} but {len(body)} payload bytes")
        return cls(tag, body)


def _recv_exact(sock, n):
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise ConnectionError("connection closed")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def send_frame(sock, frame):
    sock.sendall(frame.encode())


def recv_frame(sock):
    tag, length = FRAME_HEADER.unpack(_recv_exact(sock, FRAME_HEADER.size))
    return WireFrame(tag, _recv_exact(sock, length))


# --------------------------------------------------------------------------
# partitioning and sampling


@dataclass(frozen=True)
class PartitionPlan:
    """``(worker_id, start, stop)`` ranges, contiguous and in row order."""

    assignments: tuple

    @property
    def n_rows(self):
        return self.assignments[-1][2] if self.assignments else 0

    def sizes(self):
        return [stop - start for _, start, stop in self.assignments]


def plan_partitions(n_rows, n_workers):
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    if n_rows < 0:
        raise ValueError("n_rows must be >= 0")
    base, extra = divmod(n_rows, n_workers)
    out = []
    start = 0
    for w in range(n_workers):
        stop = start + base + (w < extra)
        out.append((w, start, stop))
        start = stop
    return PartitionPlan(tuple(out))


def sample_rows(n, fraction, seed):
    """Sorted ids of ``round(fraction * n)`` rows drawn without replacement."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    m = int(round(fraction * n))
    keys = _rng.hash_counters(seed, _rng.STREAM_SAMPLE, np.arange(n, dtype=np.uint64))
    return np.sort(np.argsort(keys, kind="stable")[:m])


def train_on_sample(data, labels=None, params=None, fraction=1.0, seed=0, **fit_kwargs):
    """Fit on a seeded row sample. Returns ``(model, sample_ids)``."""
    data = np.asarray(data, dtype=np.float32)
    ids = sample_rows(data.shape[0], fraction, seed)
    k = params.n_neighbors if params is not None else 15
    if ids.size <= k:
        raise ValueError(
            f"sample of {ids.size} rows is too small for n_neighbors={k}; raise the fraction"
        )
    sub_labels = None if labels is None else np.asarray(labels)[ids]
    return fit(data[ids], labels=sub_labels, params=params, **fit_kwargs), ids


# --------------------------------------------------------------------------
# worker


class Worker:
    """Frame handler holding at most one model."""

    def __init__(self):
        self.model = None

    def handle(self, frame):
        """Process one request frame and return ``(reply, keep_running)``."""
        try:
            if frame.tag == LOAD_MODEL:
                self.model = model_from_bytes(frame.payload)
                return WireFrame(RESULT), True
            if frame.tag == TRANSFORM:
                if self.model is None:
                    return WireFrame(ERROR, b"no model loaded"), True
                rows, stop = matrix_from_bytes(frame.payload)
                if stop != len(frame.payload):
                    raise FormatError("trailing bytes after matrix")
                out = transform(self.model, rows)
                return WireFrame(RESULT, matrix_to_bytes(out)), True
            if frame.tag == SHUTDOWN:
                return WireFrame(RESULT), False
            return WireFrame(ERROR, f"unknown tag {frame.tag}".encode()), True
        except Exception as exc:  # reported to the coordinator, worker stays up
            logger.exception("request failed")
            return WireFrame(ERROR, f"{type(exc).__name__}: {exc}".encode()), True


def parse_address(addr):
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def serve_worker(bind, on_ready=None):
    """Serve frames on ``bind`` ("host:port") until a SHUTDOWN frame arrives.

    ``on_ready(host, port)`` is called once listening (useful with port 0).
    Connections are served one at a time; a dropped connection does not stop
    the worker.
    """
    host, port = parse_address(bind)
    worker = Worker()
    with socket.create_server((host, port)) as srv:
        host, port = srv.getsockname()[:2]
        logger.info("worker listening on %s:%d", host, port)
        if on_ready is not None:
            on_ready(host, port)
        while True:
            conn, _ = srv.accept()
            with conn:
                try:
                    while True:
                        reply, keep = worker.handle(recv_frame(conn))
                        send_frame(conn, reply)
                        if not keep:
                            return
                except ConnectionError:
                    continue


# --------------------------------------------------------------------------
# coordinator


class _InProcessLink:
    def __init__(self):
        self.worker = Worker()
        self._reply = None

    def send(self, frame):
        # through bytes, like the socket path
        self._reply, _ = self.worker.handle(WireFrame.decode(frame.encode()))

    def recv(self):
        return WireFrame.decode(self._reply.encode())

    def close(self):
        pass


class _SocketLink:
    def __init__(self, address, timeout):
        self.sock = socket.create_connection(parse_address(address), timeout=timeout)

    def send(self, frame):
        send_frame(self.sock, frame)

    def recv(self):
        return recv_frame(self.sock)

    def close(self):
        self.sock.close()


def _request(link, frame, worker_id):
    link.send(frame)
    reply = link.recv()
    if reply.tag == ERROR:
        raise WorkerError(worker_id, reply.payload.decode("utf-8", "replace"))
    if reply.tag != RESULT:
        raise WorkerError(worker_id, f"unexpected reply tag {reply.tag}")
    return reply.payload


def run_inference(model, data, plan, transport="inprocess", addresses=None,
                  timeout=DEFAULT_TIMEOUT):
    """Transform ``data`` across workers and gather the result in row order.

    Parameters
    ----------
    model: UmapModel
    data: array (n, n_features)
    plan: PartitionPlan
        Must cover exactly ``n`` rows. Workers with empty ranges are skipped.
    transport: "inprocess" or "socket"
    addresses: list of "host:port", one per worker id (socket transport)
    timeout: float
        Per-socket-operation timeout in seconds.

    Raises
    ------
    WorkerError
        Naming the first failing worker.
    """
    data = np.asarray(data, dtype=np.float32)
    if plan.n_rows != data.shape[0]:
        raise ValueError(f"plan covers {plan.n_rows} rows, data has {data.shape[0]}")
    if transport not in ("inprocess", "socket"):
        raise ValueError(f"unknown transport {transport!r}")
    active = [a for a in plan.assignments if a[2] > a[1]]
    if transport == "socket":
        if addresses is None or len(addresses) < len(plan.assignments):
            raise ValueError("socket transport needs one address per worker")

    blob = model_to_bytes(model)
    out = np.empty((data.shape[0], model.embedding.shape[1]), dtype=np.float32)

    def run(assignment):
        wid, start, stop = assignment
        try:
            if transport == "socket":
                link = _SocketLink(addresses[wid], timeout)
            else:
                link = _InProcessLink()
        except OSError as exc:
            raise WorkerError(wid, f"cannot connect: {exc}") from None
        try:
            _request(link, WireFrame(LOAD_MODEL, blob), wid)
            payload = _request(link, WireFrame(TRANSFORM, matrix_to_bytes(data[start:stop])), wid)
            rows, _ = matrix_from_bytes(payload)
            if rows.shape != (stop - start, out.shape[1]):
                raise WorkerError(wid, f"result has shape {rows.shape}")
            out[start:stop] = rows
        except socket.timeout:
            raise WorkerError(wid, "timed out") from None
        except (OSError, ConnectionError, FormatError) as exc:
            raise WorkerError(wid, f"{type(exc).__name__}: {exc}") from None
        finally:
            link.close()

    if not active:
        return out
    with ThreadPoolExecutor(len(active)) as pool:
        futures = [pool.submit(run, a) for a in active]
        for f in futures:
            f.result()
    return out


def shutdown_worker(address, timeout=10.0):
    link = _SocketLink(address, timeout)
    try:
        _request(link, WireFrame(SHUTDOWN), address)
    finally:
        link.close()


def sample_and_infer(data, labels=None, params=None, fraction=0.03, seed=0, n_workers=1,
                     transport="inprocess", addresses=None, timings=None):
    """Train on a sample, transform the other rows, return the full embedding.

    Sampled rows keep their trained coordinates. Returns
    ``(embedding, model, sample_ids)``.
    """
    data = np.asarray(data, dtype=np.float32)
    model, ids = train_on_sample(data, labels, params, fraction, seed, timings=timings)
    rest = np.setdiff1d(np.arange(data.shape[0]), ids)
    plan = plan_partitions(rest.size, n_workers)
    emb = np.empty((data.shape[0], model.embedding.shape[1]), dtype=np.float32)
    emb[ids] = model.embedding
    emb[rest] = run_inference(model, data[rest], plan, transport, addresses)
    return emb, model, ids
