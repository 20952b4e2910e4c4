"""Train on a small sample, embed everything else on workers.

Starts two socket workers in background threads, fits on 3% of a 10k-row
dataset, and transforms the rest in two partitions. The in-process
transport gives the same bytes.
"""

import threading

import numpy as np

from umapkit.distributed import (
    plan_partitions,
    run_inference,
    serve_worker,
    shutdown_worker,
    train_on_sample,
)
from umapkit.model import UmapParams, fit
from umapkit.optimizer import OptimizerConfig
from umapkit.trust import trustworthiness


def start_worker():
    ready = threading.Event()
    addr = []

    def on_ready(host, port):
        addr.append(f"{host}:{port}")
        ready.set()

    threading.Thread(target=serve_worker, args=("127.0.0.1:0", on_ready), daemon=True).start()
    ready.wait()
    return addr[0]


def main():
    r = np.random.default_rng(1)
    y = np.arange(10000) % 6
    basis = r.normal(size=(6, 3, 40)) * 0.5
    x = r.uniform(-10, 10, size=(6, 40))[y] + np.einsum("ni,nid->nd", r.normal(size=(10000, 3)), basis[y])
    x = x.astype(np.float32)

    params = UmapParams(optimizer=OptimizerConfig(mode="deterministic"))
    model, ids = train_on_sample(x, params=params, fraction=0.03, seed=0)
    rest = np.setdiff1d(np.arange(len(x)), ids)
    print(f"trained on {ids.size} rows, {rest.size} left to transform")

    workers = [start_worker(), start_worker()]
    plan = plan_partitions(rest.size, 2)
    over_sockets = run_inference(model, x[rest], plan, "socket", workers)
    in_process = run_inference(model, x[rest], plan)
    print("socket == in-process:", over_sockets.tobytes() == in_process.tobytes())
    for a in workers:
        shutdown_worker(a)

    emb = np.empty((len(x), 2), dtype=np.float32)
    emb[ids] = model.embedding
    emb[rest] = over_sockets
    full = fit(x, params=params).embedding
    print(f"trustworthiness, sampled + transformed: {trustworthiness(x, emb):.4f}")
    print(f"trustworthiness, full fit:              {trustworthiness(x, full):.4f}")


if __name__ == "__main__":
    main()
