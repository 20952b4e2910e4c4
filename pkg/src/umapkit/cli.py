"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import json
import logging
import statistics
import sys
import time

import numpy as np

from . import io
from .distributed import (
    parse_address,
    sample_and_infer,
    serve_worker,
)
from .model import UmapParams, fit, load_model, save_model, transform
from .optimizer import OptimizerConfig
from .trust import TrustConfig, trustworthiness

STAGES = ("knn", "fuzzy", "init", "optimize")


class UsageError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _fraction(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {v}")
    return v


def _address_list(text):
    out = [a.strip() for a in text.split(",") if a.strip()]
    try:
        for a in out:
            parse_address(a)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not out:
        raise argparse.ArgumentTypeError("empty address list")
    return out


def _add_input(p, required=True):
    p.add_argument("--input", required=required, help="data matrix (.csv or UMD1)")
    p.add_argument("--header", action="store_true", help="CSV input has a header line")
    p.add_argument("--label-column", help="CSV column (index or name) holding labels")
    p.add_argument("--labels", help="label file (UML1, or CSV with one integer per line)")


def _add_hyper(p):
    p.add_argument("--n-neighbors", type=_positive_int, default=15)
    p.add_argument("--n-components", type=_positive_int, default=2)
    p.add_argument("--min-dist", type=float, default=0.1)
    p.add_argument("--spread", type=_positive_float, default=1.0)
    p.add_argument("--epochs", type=_nonneg_int, default=None,
                   help="optimizer epochs (default 500 below 10k rows, else 200)")
    p.add_argument("--negative-samples", type=_nonneg_int, default=5)
    p.add_argument("--lr", type=_positive_float, default=1.0)
    p.add_argument("--init", choices=("random", "spectral"), default="spectral")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--deterministic", action="store_true",
                   help="bit-reproducible optimizer for any thread count")
    p.add_argument("--supervised", action="store_true", help="use labels during fitting")


def _add_common(p):
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--json", action="store_true", help="machine-readable JSON lines")


def build_parser():
    parser = argparse.ArgumentParser(prog="umapkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model")
    _add_input(p)
    _add_hyper(p)
    _add_common(p)
    p.add_argument("--out", help="model file to write")
    p.add_argument("--embedding", help="embedding output (.csv for CSV, else UMD1)")
    p.add_argument("--svg", help="scatter plot of a 2-D embedding")
    p.add_argument("--knn-graph", help="precomputed neighbor graph (UMK1)")

    p = sub.add_parser("transform", help="embed new rows with a fitted model")
    _add_input(p)
    _add_common(p)
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--embedding", required=True, help="embedding output")
    p.add_argument("--epochs", type=_nonneg_int, default=None,
                   help="refinement epochs (default: a third of the training epochs)")
    p.add_argument("--svg")
    p.add_argument("--knn-graph", help="precomputed query-to-training neighbors (UMK1)")

    p = sub.add_parser("eval-trust", help="trustworthiness of an embedding")
    _add_input(p)
    _add_common(p)
    p.add_argument("--embedding", required=True)
    p.add_argument("--k", type=_positive_int, default=15)
    p.add_argument("--batch-size", type=_positive_int, default=512)

    p = sub.add_parser("bench", help="repeat fit, report time and trust")
    _add_input(p)
    _add_hyper(p)
    _add_common(p)
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--k", type=_positive_int, default=15)
    p.add_argument("--batch-size", type=_positive_int, default=512)

    p = sub.add_parser("worker", help="serve distributed inference requests")
    p.add_argument("--bind", required=True, help="host:port (port 0 picks a free one)")

    p = sub.add_parser("infer-dist", help="train on a sample, transform the rest on workers")
    _add_input(p)
    _add_hyper(p)
    _add_common(p)
    p.add_argument("--fraction", type=_fraction, default=0.03)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--connect", type=_address_list, help="comma-separated worker host:port list")
    p.add_argument("--out", help="model file to write")
    p.add_argument("--embedding", required=True)
    p.add_argument("--svg")
    p.add_argument("--k", type=_positive_int, default=None,
                   help="also report trustworthiness at this k")
    p.add_argument("--batch-size", type=_positive_int, default=512)
    return parser


# --------------------------------------------------------------------------
# helpers


def _load_input(args):
    label_column = args.label_column
    header = args.header
    if label_column is not None:
        if label_column.lstrip("-").isdigit():
            label_column = int(label_column)
        else:
            header = True
    data, labels = io.load_matrix(args.input, has_header=header, label_column=label_column)
    if args.labels:
        if labels is not None:
            raise UsageError("give either --labels or --label-column, not both")
        labels = _load_labels(args.labels)
        if labels.shape[0] != data.shape[0]:
            raise ValueError(f"{labels.shape[0]} labels for {data.shape[0]} rows")
    return data, labels


def _load_labels(path):
    if str(path).lower().endswith((".csv", ".txt")):
        values, _ = io.load_csv(path)
        if values.shape[1] != 1 or not np.array_equal(values[:, 0], np.round(values[:, 0])):
            raise io.FormatError(f"{path}: expected one integer label per line")
        return values[:, 0].astype(np.int64)
    return io.load_labels(path)


def _params(args):
    opt = OptimizerConfig(
        n_epochs=args.epochs, initial_lr=args.lr, n_negative_samples=args.negative_samples,
        min_dist=args.min_dist, spread=args.spread, seed=args.seed,
        mode="deterministic" if args.deterministic else "async", n_threads=args.threads,
    )
    return UmapParams(n_neighbors=args.n_neighbors, n_components=args.n_components,
                      init=args.init, optimizer=opt)


def _fit_labels(args, labels):
    if args.supervised and labels is None:
        raise UsageError("--supervised needs --labels or --label-column")
    return labels if args.supervised else None


def _write_embedding(emb, path):
    if str(path).lower().endswith(".csv"):
        io.save_csv(emb, path)
    else:
        io.save_binary(emb, path)


def _report_timings(args, timings, out):
    for stage in STAGES:
        secs = float(timings.get(stage, 0.0))
        if args.json:
            print(json.dumps({"stage": stage, "seconds": secs}), file=out)
        else:
            print(f"{stage:>9s}: {secs:.3f} s", file=out)


def _emit(args, record, text, out):
    print(json.dumps(record) if args.json else text, file=out)


# --------------------------------------------------------------------------
# commands


def cmd_fit(args, out=sys.stdout):
    if not (args.out or args.embedding):
        raise UsageError("nothing to write: give --out and/or --embedding")
    if args.svg and args.n_components != 2:
        raise UsageError("--svg needs --n-components 2")
    data, labels = _load_input(args)
    fit_labels = _fit_labels(args, labels)
    params = _params(args)
    precomputed = io.load_knn_graph(args.knn_graph) if args.knn_graph else None
    timings = {}
    model = fit(data, labels=fit_labels, params=params, precomputed=precomputed, timings=timings)
    if args.out:
        save_model(model, args.out)
    if args.embedding:
        _write_embedding(model.embedding, args.embedding)
    if args.svg:
        io.emit_scatter_svg(model.embedding, args.svg, labels=labels)
    _report_timings(args, timings, out)
    return 0


def cmd_transform(args, out=sys.stdout):
    model = load_model(args.model)
    if args.svg and model.embedding.shape[1] != 2:
        raise UsageError("--svg needs a 2-D model")
    data, labels = _load_input(args)
    precomputed = io.load_knn_graph(args.knn_graph) if args.knn_graph else None
    timings = {}
    emb = transform(model, data, precomputed=precomputed, n_epochs=args.epochs,
                    n_threads=args.threads, timings=timings)
    _write_embedding(emb, args.embedding)
    if args.svg:
        io.emit_scatter_svg(emb, args.svg, labels=labels)
    _report_timings(args, timings, out)
    return 0


def cmd_eval_trust(args, out=sys.stdout):
    data, _ = _load_input(args)
    emb, _ = io.load_matrix(args.embedding)
    cfg = TrustConfig(args.k, args.batch_size)
    t = trustworthiness(data, emb, cfg, n_threads=args.threads)
    _emit(args, {"trustworthiness": t, "k": args.k, "batch_size": args.batch_size},
          f"trustworthiness (k={args.k}, batch_size={args.batch_size}): {t:.6f}", out)
    return 0


def cmd_bench(args, out=sys.stdout):
    data, labels = _load_input(args)
    fit_labels = _fit_labels(args, labels)
    params = _params(args)
    cfg = TrustConfig(args.k, args.batch_size)
    times, trusts = [], []
    for r in range(args.repeats):
        t0 = time.perf_counter()
        model = fit(data, labels=fit_labels, params=params)
        elapsed = time.perf_counter() - t0
        score = trustworthiness(data, model.embedding, cfg, n_threads=args.threads)
        times.append(elapsed)
        trusts.append(score)
        _emit(args, {"run": r, "seconds": elapsed, "trustworthiness": score},
              f"run {r}: {elapsed:.3f} s, trustworthiness {score:.6f}", out)
    mean = statistics.fmean(times)
    var = statistics.pvariance(times)
    trust_var = statistics.pvariance(trusts)
    _emit(args, {"mean_seconds": mean, "var_seconds": var, "max_trustworthiness": max(trusts),
                 "var_trustworthiness": trust_var, "repeats": args.repeats},
          f"fit time {mean:.3f} ± {var:.4f} s over {args.repeats} runs, "
          f"max trustworthiness {max(trusts):.6f}", out)
    return 0


def cmd_worker(args, out=sys.stdout):
    def ready(host, port):
        print(f"listening on {host}:{port}", file=out, flush=True)

    serve_worker(args.bind, on_ready=ready)
    return 0


def cmd_infer_dist(args, out=sys.stdout):
    if args.connect and len(args.connect) != args.workers:
        raise UsageError(f"--connect lists {len(args.connect)} addresses for --workers {args.workers}")
    if args.svg and args.n_components != 2:
        raise UsageError("--svg needs --n-components 2")
    data, labels = _load_input(args)
    fit_labels = _fit_labels(args, labels)
    params = _params(args)
    timings = {}
    t0 = time.perf_counter()
    emb, model, ids = sample_and_infer(
        data, fit_labels, params, fraction=args.fraction, seed=args.seed,
        n_workers=args.workers, transport="socket" if args.connect else "inprocess",
        addresses=args.connect, timings=timings,
    )
    total = time.perf_counter() - t0
    if args.out:
        save_model(model, args.out)
    _write_embedding(emb, args.embedding)
    if args.svg:
        io.emit_scatter_svg(emb, args.svg, labels=labels)
    _report_timings(args, timings, out)
    _emit(args, {"sample_rows": int(ids.size), "total_rows": int(data.shape[0]),
                 "workers": args.workers, "seconds": total},
          f"trained on {ids.size} of {data.shape[0]} rows, {args.workers} worker(s), "
          f"{total:.3f} s", out)
    if args.k is not None:
        t = trustworthiness(data, emb, TrustConfig(args.k, args.batch_size), n_threads=args.threads)
        _emit(args, {"trustworthiness": t, "k": args.k},
              f"trustworthiness (k={args.k}): {t:.6f}", out)
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "transform": cmd_transform,
    "eval-trust": cmd_eval_trust,
    "bench": cmd_bench,
    "worker": cmd_worker,
    "infer-dist": cmd_infer_dist,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, sys.stdout)
    except UsageError as exc:
        parser.error(str(exc))
    except KeyboardInterrupt:
        return 1
    except Exception as exc:
        logging.getLogger("umapkit").debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
