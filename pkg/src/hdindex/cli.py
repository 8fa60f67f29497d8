"""Command-line entry point: ``hdindex build | gtruth | query | eval | borda``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal invariant violation. Every command that writes an output also
writes ``<output>.manifest.json`` recording inputs, checksums and timings.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import resource
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, borda, builder, evaluation, ingest
from .core import ConfigurationError, HDIndexError, QueryParams
from .query import COMBINED, TRIANGULAR, QueryStats

logger = logging.getLogger("hdindex")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
FILTERS = {"triangular": TRIANGULAR, "combined": COMBINED}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _peak_memory_kb() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss


def _write_manifest(output: str, command: str, args: argparse.Namespace, **extra) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "argv": sys.argv[1:],
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "peak_memory_kb": _peak_memory_kb(),
        **extra,
    }
    with open(output + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load(path, kind):
    return ingest.read_vecs(path, kind)


def cmd_build(args) -> int:
    t0 = time.perf_counter()
    data = _load(args.dataset, args.kind)
    if args.dedup:
        data = ingest.deduplicate(data)
    if data.n == 0:
        raise HDIndexError(f"{args.dataset} holds no vectors")
    cfg = builder.IndexConfig.for_data(
        data, tau=args.tau, omega=args.omega, m=args.m, f=args.f, page_size=args.page_size,
        method=args.method, seed=args.seed)
    t1 = time.perf_counter()
    index = builder.build(data, cfg, args.output)
    index.close()
    elapsed = time.perf_counter() - t1
    size = os.path.getsize(args.output) + os.path.getsize(args.output + ".desc")
    config = {**vars(cfg), "domain": list(cfg.domain), "eta": cfg.eta}
    _write_manifest(
        args.output, "build", args,
        config=config,
        seed=cfg.seed,
        dataset_sha256=evaluation.file_sha256(args.dataset),
        index_sha256=evaluation.paths_sha256(args.output, args.output + ".desc"),
        n=data.n, dim=data.dim,
        timings={"load_s": t1 - t0, "build_s": elapsed},
        index_bytes=size,
    )
    print(f"built {args.output}: n={data.n} dim={data.dim} tau={cfg.tau} omega={cfg.omega} "
          f"m={cfg.m} in {elapsed:.2f}s, {size} bytes")
    return EXIT_OK


def cmd_gtruth(args) -> int:
    data = _load(args.dataset, args.kind)
    queries = _load(args.queries, args.query_kind)
    if queries.n and data.n and queries.dim != data.dim:
        raise HDIndexError(f"queries have {queries.dim} dims, dataset has {data.dim}")
    t0 = time.perf_counter()
    truths = [evaluation.exact_knn(data, q, args.k) for q in queries.coords]
    elapsed = time.perf_counter() - t0
    evaluation.write_neighbors(args.output, truths, args.k, evaluation.dataset_checksum(data))
    _write_manifest(args.output, "gtruth", args,
                    dataset_sha256=evaluation.file_sha256(args.dataset),
                    queries_sha256=evaluation.file_sha256(args.queries),
                    output_sha256=evaluation.file_sha256(args.output),
                    timings={"scan_s": elapsed})
    print(f"wrote ground truth for {queries.n} queries (k={args.k}) to {args.output}")
    return EXIT_OK


def cmd_query(args) -> int:
    params = QueryParams(args.alpha, args.beta if args.beta else args.alpha, args.gamma, args.k)
    mode = FILTERS[args.filter]
    queries = _load(args.queries, args.query_kind)
    with builder.load(args.index) as index:
        if queries.n and queries.dim != index.config.dim:
            raise HDIndexError(f"queries have {queries.dim} dims, index has {index.config.dim}")

        def run(q):
            stats = QueryStats()
            t = time.perf_counter()
            res = index.knn(q, params, mode, stats)
            elapsed = time.perf_counter() - t
            if not stats.kappa_within_bounds():
                raise AssertionError(f"candidate set size {stats.kappa} outside bounds for {stats.survivors}")
            return res, elapsed, stats.kappa

        workers = args.workers or os.cpu_count() or 1
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(run, queries.coords))
    results = [r for r, _, _ in out]
    times = [t for _, t, _ in out]
    evaluation.write_neighbors(args.output, results, args.k, magic=evaluation.RESULTS_MAGIC)
    mean_ms = 1000 * float(np.mean(times)) if times else 0.0
    _write_manifest(args.output, "query", args,
                    index_sha256=evaluation.paths_sha256(args.index, args.index + ".desc"),
                    queries_sha256=evaluation.file_sha256(args.queries),
                    params=vars(params), filter_mode=mode,
                    timings={"per_query_s": times, "mean_query_ms": mean_ms},
                    kappa=[kp for _, _, kp in out])
    print(f"answered {len(results)} queries, mean {mean_ms:.2f} ms/query -> {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    results, _, _, _ = evaluation.read_neighbors(args.results)
    truths, gt_k, _, _ = evaluation.read_neighbors(args.ground_truth, evaluation.GROUND_TRUTH_MAGIC)
    k = args.k or gt_k
    if k > gt_k:
        raise HDIndexError(f"ground truth only holds {gt_k} neighbours per query")
    report = evaluation.evaluate(results, truths, k)
    print(report.summary())
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    return EXIT_OK


def cmd_borda(args) -> int:
    results, k, _, _ = evaluation.read_neighbors(args.results)
    owners = borda.read_owners(args.owners)
    table = borda.borda_scores(results, owners, args.k or k)
    for image in borda.top_images(table, args.top):
        print(f"{image}\t{table[image]}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hdindex", description="Disk-based approximate k-NN search with Hilbert-keyed RDB-trees.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build", help="build an index from a vecs file")
    b.add_argument("dataset")
    b.add_argument("-o", "--output", required=True)
    b.add_argument("--kind", choices=sorted(ingest.KINDS))
    b.add_argument("--tau", type=int, help="number of trees (default 8, 16 from 500 dims)")
    b.add_argument("--omega", type=int, help="Hilbert order (default 8 for byte data, else 32)")
    b.add_argument("--m", type=int, default=10, help="reference objects")
    b.add_argument("--f", type=float, default=0.3, help="SSS spread fraction")
    b.add_argument("--method", choices=builder.METHODS, default="sss")
    b.add_argument("--page-size", type=int, default=4096)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--dedup", action="store_true", help="drop duplicate points first")
    b.set_defaults(func=cmd_build)

    g = sub.add_parser("gtruth", help="exact k-NN ground truth by linear scan")
    g.add_argument("dataset")
    g.add_argument("queries")
    g.add_argument("-k", type=int, default=100)
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--kind", choices=sorted(ingest.KINDS))
    g.add_argument("--query-kind", choices=sorted(ingest.KINDS))
    g.set_defaults(func=cmd_gtruth)

    q = sub.add_parser("query", help="answer kANN queries against an index")
    q.add_argument("index")
    q.add_argument("queries")
    q.add_argument("-o", "--output", required=True)
    q.add_argument("-k", type=int, default=100)
    q.add_argument("--alpha", type=int, default=4096)
    q.add_argument("--beta", type=int, help="triangular survivors in combined mode (default alpha)")
    q.add_argument("--gamma", type=int, default=1024)
    q.add_argument("--filter", choices=sorted(FILTERS), default="triangular")
    q.add_argument("--workers", type=int, default=0, help="query threads (default: all cores)")
    q.add_argument("--query-kind", choices=sorted(ingest.KINDS))
    q.set_defaults(func=cmd_query)

    e = sub.add_parser("eval", help="MAP@k and approximation ratio of a results file")
    e.add_argument("results")
    e.add_argument("ground_truth")
    e.add_argument("-k", type=int, default=0, help="evaluation depth (default: ground-truth k)")
    e.add_argument("--json", help="write the machine-readable report here")
    e.set_defaults(func=cmd_eval)

    bc = sub.add_parser("borda", help="rank images by Borda count over a results file")
    bc.add_argument("results")
    bc.add_argument("owners", help="descriptor -> image map (text, or .bin int64 pairs)")
    bc.add_argument("-k", type=int, default=0)
    bc.add_argument("--top", type=int, default=10)
    bc.set_defaults(func=cmd_borda)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"hdindex: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"hdindex: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HDIndexError, OSError, ValueError) as exc:
        print(f"hdindex: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AssertionError as exc:
        print(f"hdindex: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
