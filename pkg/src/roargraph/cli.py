"""Command-line entry point.

Every subcommand accepts ``--config FILE``: a flat ``key = value`` text
file whose keys are long option names (``l-sweep`` or ``l_sweep``).
Explicit flags override the file, which overrides built-in defaults.

Exit codes: 0 success, 1 user error (bad flags, files or parameters),
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from roargraph import bench
from roargraph.analysis import (
    DESK_WORKLOAD,
    gen_synthetic,
    mahalanobis_profile,
    nn_dispersion_profile,
    nn_distance_profile,
    wasserstein2_sinkhorn,
)
from roargraph.construction import STAGES, build_baseline_graph, build_roargraph, project
from roargraph.core import ContractError, Metric, VectorSet
from roargraph.io import LoadError, load_index, read_fbin, read_gt, save_index, write_fbin, write_gt
from roargraph.oracle import exact_knn
from roargraph.update import delete, insert_many

log = logging.getLogger("roargraph")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def _id_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ids, got {text!r}") from None
    if not values or min(values) < 0:
        raise argparse.ArgumentTypeError("ids must be non-negative integers")
    return values


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive(text) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", help="flat key = value file with option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive, default=1)
    p.add_argument("--metric", default="l2", help="l2, ip or cosine")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="roargraph", description="Query-guided graph index for OOD vector search.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic OOD workload")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-base", type=int, default=100_000)
    p.add_argument("--n-query-ood", type=int, default=100_000)
    p.add_argument("--n-query-id", type=int, default=1_000)
    p.add_argument("--n-eval", type=int, default=1_000, help="extra OOD queries written to eval.fbin")
    p.add_argument("--dim", type=int, default=DESK_WORKLOAD["dim"])
    p.add_argument("--shell-noise", type=float, default=DESK_WORKLOAD["shell_noise"])
    p.add_argument("--ood-depth", type=float, default=DESK_WORKLOAD["ood_depth"])
    p.add_argument("--spread", type=float, default=DESK_WORKLOAD["spread"],
                   help="angular spread of the cone; 0 means uniform directions")
    p.add_argument("--decay", type=float, default=DESK_WORKLOAD["decay"])

    p = sub.add_parser("gt", parents=[common], help="exact k-NN ground truth")
    p.add_argument("--base", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=_positive, default=100)
    p.add_argument("--out", required=True)

    p = sub.add_parser("build", parents=[common], help="build a RoarGraph index")
    p.add_argument("--base", required=True)
    p.add_argument("--queries", required=True, help="construction queries")
    p.add_argument("--gt", help="precomputed Nq-NN ground truth of the construction queries")
    p.add_argument("--out", required=True)
    p.add_argument("--nq", type=_positive, default=100)
    p.add_argument("--m", type=_positive, default=35)
    p.add_argument("--l", type=_positive, default=500)
    p.add_argument("--query-fraction", type=float, default=1.0)

    p = sub.add_parser("build-baseline", parents=[common], help="build the query-agnostic baseline graph")
    p.add_argument("--base", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=_positive, default=35)
    p.add_argument("--l", type=_positive, default=500)

    p = sub.add_parser("search", parents=[common], help="L sweep: recall, QPS, hops per L")
    p.add_argument("--index", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--k", type=_positive, default=10)
    p.add_argument("--l-sweep", type=_int_list, default=list(bench.DEFAULT_SWEEP))
    p.add_argument("--graph-stage", choices=STAGES, default="enhanced")
    p.add_argument("--repeats", type=_positive, default=bench.QPS_REPEATS)
    p.add_argument("--label", default="")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("insert", parents=[common], help="insert vectors through the bipartite graph")
    p.add_argument("--index", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--l", type=_positive, help="search pool size (default: build L)")
    p.add_argument("--out-index", help="default: rewrite --index")
    p.add_argument("--out-base", help="default: rewrite --base")

    p = sub.add_parser("delete", parents=[common], help="tombstone node ids")
    p.add_argument("--index", required=True)
    p.add_argument("--ids", type=_id_list, required=True)
    p.add_argument("--out-index", help="default: rewrite --index")

    p = sub.add_parser("analyze", parents=[common], help="OOD diagnostics of a query set")
    p.add_argument("--base", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gt", help="ground truth of --queries (computed if absent)")
    p.add_argument("--k", type=int, default=100, help="neighbors per query for dispersion")
    p.add_argument("--sample-size", type=int, default=None, help="base rows for covariance and W2")
    p.add_argument("--w2-sample", type=int, default=2000)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("report", parents=[common], help="merge sweep CSVs into a comparison table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--target-recall", type=_float_list, default=[0.9])
    p.add_argument("--out", help="CSV path; the table is always printed")

    p = sub.add_parser("serve", parents=[common], help="HTTP service over a loaded index")
    p.add_argument("--index", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known - {"config"})
        if unknown:
            raise UsageError(f"{args.config}: unknown option(s) {', '.join(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


# -- commands ------------------------------------------------------------------


def _load(path, metric) -> VectorSet:
    return read_fbin(path, metric)


def cmd_gen(args) -> None:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w = gen_synthetic(
        args.n_base,
        args.n_query_ood + args.n_eval,
        args.n_query_id,
        args.dim,
        seed=args.seed,
        shell_noise=args.shell_noise,
        ood_depth=args.ood_depth,
        spread=args.spread or None,
        decay=args.decay,
    )
    ood = w.ood_queries.data
    write_fbin(w.base, out / "base.fbin")
    write_fbin(ood[: args.n_query_ood], out / "queries.fbin")
    write_fbin(ood[args.n_query_ood :], out / "eval.fbin")
    write_fbin(w.id_queries, out / "id_queries.fbin")
    print(f"wrote base.fbin, queries.fbin, eval.fbin, id_queries.fbin to {out}")


def cmd_gt(args) -> None:
    base = _load(args.base, args.metric)
    queries = _load(args.queries, args.metric)
    write_gt(exact_knn(base, queries, args.k, args.threads), args.out)


def cmd_build(args) -> None:
    base = _load(args.base, args.metric)
    queries = bench.select_fraction(_load(args.queries, args.metric), args.query_fraction, args.seed)
    gt = None
    if args.gt:
        if args.query_fraction != 1:
            raise ContractError("--gt cannot be combined with --query-fraction < 1")
        gt = read_gt(args.gt)
    index, bip = build_roargraph(base, queries, args.nq, args.m, args.l, args.threads, gt)
    save_index(index, args.out, bip)
    print(f"index: {index.n} nodes, {index.edge_count()} edges, {bip.query_count} construction queries")


def cmd_build_baseline(args) -> None:
    base = _load(args.base, args.metric)
    index = build_baseline_graph(base, args.m, args.l, args.threads)
    save_index(index, args.out)
    print(f"baseline: {index.n} nodes, {index.edge_count()} edges")


def _index_and_base(args):
    index, bip = load_index(args.index)
    base = _load(args.base, index.metric)
    if base.dim != index.dim:
        raise ContractError(f"base dimension {base.dim} != index dimension {index.dim}")
    if base.count != index.n:
        raise ContractError(f"base has {base.count} vectors but the index has {index.n} nodes")
    return index, bip, base


def cmd_search(args) -> None:
    index, bip, base = _index_and_base(args)
    queries = _load(args.queries, index.metric)
    gt = read_gt(args.gt)
    if gt.query_count != queries.count:
        raise ContractError(f"ground truth covers {gt.query_count} queries, got {queries.count}")
    if gt.k < args.k:
        raise ContractError(f"ground truth depth {gt.k} < k={args.k}")
    if max(args.l_sweep) < args.k:
        raise ContractError("every L in the sweep must be >= k")
    ls = [L for L in args.l_sweep if L >= args.k]
    if len(ls) < len(args.l_sweep):
        log.warning("skipping L values below k=%d", args.k)
    projected = None
    if args.graph_stage != "enhanced" and bip is None:
        raise ContractError(f"stage {args.graph_stage!r} needs an index saved with its bipartite graph")
    if args.graph_stage == "projected":
        projected = project(bip, base, index.params.m, index.params.l)
    graph = bench.stage_graph(args.graph_stage, base, index, bip, projected)
    label = args.label or f"{Path(args.index).stem}:{args.graph_stage}"
    rows = bench.sweep(graph, queries, gt, args.k, ls, args.threads, args.repeats, label)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            bench.write_sweep(rows, fh)
    else:
        bench.write_sweep(rows, sys.stdout)


def cmd_insert(args) -> None:
    index, bip, base = _index_and_base(args)
    vectors = _load(args.vectors, index.metric)
    reports = insert_many(index, bip, base, vectors.data, args.l)
    fallbacks = sum(r.fallback for r in reports)
    save_index(index, args.out_index or args.index, bip)
    write_fbin(base, args.out_base or args.base)
    first = reports[0].node if reports else index.n
    print(f"inserted {len(reports)} vectors as ids {first}..{index.n - 1} ({fallbacks} via fallback)")


def cmd_delete(args) -> None:
    index, bip = load_index(args.index)
    for node in args.ids:
        rep = delete(index, node)
        if rep.warning:
            print(f"warning: {rep.warning}", file=sys.stderr)
    save_index(index, args.out_index or args.index, bip)


def cmd_analyze(args) -> None:
    base = _load(args.base, args.metric)
    queries = _load(args.queries, args.metric)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = min(args.k, base.count)
    gt = read_gt(args.gt) if args.gt else exact_knn(base, queries, k, args.threads)
    maha = mahalanobis_profile(base, queries, args.sample_size, args.seed)
    nn = nn_distance_profile(gt, base.metric)
    disp = nn_dispersion_profile(base, gt, min(k, gt.k))
    rng = np.random.default_rng(args.seed)
    na, nb = min(args.w2_sample, queries.count), min(args.w2_sample, base.count)
    w2 = wasserstein2_sinkhorn(
        queries.data[np.sort(rng.choice(queries.count, na, replace=False))],
        base.data[np.sort(rng.choice(base.count, nb, replace=False))],
    )
    np.savetxt(out / "per_query.csv", np.column_stack([np.arange(queries.count), maha.values, nn.values]),
               delimiter=",", header="query,mahalanobis,nn_distance", comments="", fmt=["%d", "%.6g", "%.6g"])
    np.savetxt(out / "dispersion.csv", np.column_stack([np.arange(1, disp.shape[0] + 1), disp]),
               delimiter=",", header="rank,mean_separation", comments="", fmt=["%d", "%.6g"])
    for name, prof in (("mahalanobis", maha), ("nn_distance", nn)):
        h = prof.histogram
        np.savetxt(out / f"{name}_hist.csv", np.column_stack([h.edges[:-1], h.edges[1:], h.counts]),
                   delimiter=",", header="lo,hi,count", comments="", fmt=["%.6g", "%.6g", "%d"])
    summary = {
        "queries": queries.count,
        "base": base.count,
        "metric": base.metric.label,
        "mahalanobis": maha.summary(),
        "nn_distance": nn.summary(),
        "dispersion": {"k": int(disp.shape[0]), "mean": float(disp.mean())},
        "wasserstein2": {"distance": w2.distance, "iterations": w2.iterations,
                         "converged": w2.converged, "epsilon": w2.epsilon},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


def cmd_report(args) -> None:
    rows = bench.report(bench.load_sweeps(args.inputs), args.target_recall)
    if args.out:
        bench.write_report(rows, args.out)
    print(bench.format_report(rows))


def cmd_serve(args) -> None:
    import uvicorn

    from roargraph.service.app import create_app

    uvicorn.run(create_app(args.index, args.base), host=args.host, port=args.port)


COMMANDS = {
    "gen": cmd_gen,
    "gt": cmd_gt,
    "build": cmd_build,
    "build-baseline": cmd_build_baseline,
    "search": cmd_search,
    "insert": cmd_insert,
    "delete": cmd_delete,
    "analyze": cmd_analyze,
    "report": cmd_report,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        Metric.parse(args.metric)
        COMMANDS[args.command](args)
    except (ContractError, LoadError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
