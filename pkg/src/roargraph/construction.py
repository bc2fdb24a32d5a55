"""Index construction: bipartite graph, projection, connectivity enhancement.

The query-agnostic baseline graph lives here too; it shares the pruning
rule and the enhancement pass but takes its candidates from each base
vector's exact nearest base neighbors instead of from queries.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from roargraph import _kernels
from roargraph.core import ContractError, Metric, VectorSet, check_compatible, medoid, normalize_rows
from roargraph.index import BipartiteGraph, BuildParams, RoarIndex
from roargraph.io import GroundTruth
from roargraph.oracle import exact_knn, self_knn

log = logging.getLogger(__name__)

STAGES = ("bipartite", "projected", "enhanced")



def acquire_neighbors(base: VectorSet, pivot: int, candidates, m: int, fulfill: bool) -> np.ndarray:
    """Select up to ``m`` diverse neighbors for ``pivot`` from ``candidates``.

    ``candidates`` must be sorted by distance to the pivot and must not
    contain it. A candidate is kept only if it is strictly closer to the
    pivot than to every neighbor kept before it; ``fulfill`` tops the
    result up to ``m`` with rejected candidates in their original order.
    """
    if m < 1:
        raise ContractError("m must be >= 1")
    cand = np.asarray(candidates, dtype=np.int32).reshape(-1)
    if (cand == pivot).any():
        raise ContractError("pivot must not be among its own candidates")
    ds = _kernels.distances_to(base.data[cand], base.data[pivot], int(base.metric))
    return _kernels.acquire_neighbors(cand, ds, base.data, int(base.metric), m, bool(fulfill))


def build_bipartite(base: VectorSet, gt: GroundTruth, queries: VectorSet | None = None) -> BipartiteGraph:
    """Link each query to its ground-truth neighbors minus the closest one,
    which instead gets the single edge back to the query.

    ``gt`` rows must be the Nq nearest base ids of each construction query.
    The query vectors are stored on the graph when given.
    """
    nq = gt.k
    if nq < 2:
        raise ContractError("bipartite graph needs Nq >= 2")
    if gt.ids.size and gt.ids.max() >= base.count:
        raise ContractError("ground truth references ids outside the base set")
    if queries is None:
        queries = np.zeros((gt.query_count, base.dim), dtype=np.float32)
    else:
        if queries.count != gt.query_count:
            raise ContractError("ground truth and query set have different lengths")
        queries = queries.data
    anchors = gt.ids[:, 0].astype(np.int32)
    anchor_dists = gt.dists[:, 0]
    q_ids = np.ascontiguousarray(gt.ids[:, 1:], dtype=np.int32).reshape(-1)
    q_offsets = np.arange(gt.query_count + 1, dtype=np.int64) * (nq - 1)
    return BipartiteGraph(q_offsets, q_ids, anchors, anchor_dists, queries)


def _params(nq, m, l):
    if m < 1 or l < 1:
        raise ContractError("M and L must be >= 1")
    return BuildParams(nq=nq, m=m, l=l)


def project(bipartite: BipartiteGraph, base: VectorSet, m: int, l: int, entry: int | None = None) -> RoarIndex:
    """Project the bipartite graph onto the base nodes.

    Every pivot (a base node anchoring at least one query) gathers the
    out-neighbors of its bridge queries, nearest bridge first, until it has
    ``l`` candidates, keeps up to ``m`` of them and tries to add itself to
    each chosen neighbor's list. Nodes that anchor nothing and are never
    chosen stay isolated.
    """
    params = _params(bipartite.max_query_degree() + 1, m, l)
    q_off, q_ids = bipartite.query_csr()
    b_off, b_ids = bipartite.base_csr(base.count)
    adj, deg = _kernels.project(
        base.data, int(base.metric), q_off, q_ids, b_off, b_ids, bipartite.anchor_dists, m, l, True
    )
    entry = medoid(base) if entry is None else entry
    return RoarIndex(adj, deg, entry, base.metric, base.dim, params)


def search_entry(graph: RoarIndex | None, base: VectorSet, usable: np.ndarray | None = None) -> int:
    """Where searches over ``graph`` should start.

    The medoid, unless it is a dead end: then the node nearest the centroid
    among those with out-edges (or among ``usable`` when given).
    """
    if usable is None:
        usable = graph.degrees > 0
        if usable[graph.medoid] or not usable.any():
            return graph.medoid
    else:
        mid = medoid(base)
        if mid < usable.shape[0] and usable[mid] or not usable.any():
            return mid
    centroid = base.data.astype(np.float64).mean(axis=0).astype(np.float32)
    if base.metric is Metric.COSINE:
        centroid = normalize_rows(centroid[None, :])[0]
    d = _kernels.distances_to(base.data[: usable.shape[0]], centroid, int(base.metric))
    d[~usable] = np.inf
    return int(np.argmin(d))


def enhance_connectivity(projected: RoarIndex, base: VectorSet, m: int, l: int, repair: bool = True) -> RoarIndex:
    """Add search-derived neighbors to every node of a projected graph.

    Each base vector is searched on a frozen copy of ``projected``; the
    converged pool (self excluded) plus whatever the node's supplementary
    list already holds feeds the pruning rule without fulfilling, and
    reverse edges are attempted. The result is the per-node union of the
    projected and supplementary lists, capped at ``2 * m``.

    With ``repair`` a final pass links every node still unreachable from
    the medoid to its nearest reachable node with spare degree.
    """
    frozen_adj = np.ascontiguousarray(projected.adjacency)
    frozen_deg = np.ascontiguousarray(projected.degrees)
    adj = np.zeros((projected.n, m), dtype=np.int32)
    deg = np.zeros(projected.n, dtype=np.int32)
    entry = search_entry(projected, base)
    _kernels.enhance(base.data, int(base.metric), frozen_adj, frozen_deg, adj, deg, entry, m, l, True, True)
    merged, counts = _kernels.merge_lists(
        base.data, int(base.metric), frozen_adj, frozen_deg, adj, deg, 2 * m
    )
    counts = counts.astype(np.int32)
    if repair:
        added = _kernels.repair_reachability(
            base.data, int(base.metric), merged, counts, projected.medoid, l, 2 * m
        )
        if added:
            log.info("connectivity repair linked %d unreachable nodes", added)
    p = projected.params
    return RoarIndex(merged, counts, projected.medoid, base.metric, base.dim, BuildParams(nq=p.nq, m=m, l=l))


def build_roargraph(
    base: VectorSet,
    queries: VectorSet,
    nq: int = 100,
    m: int = 35,
    l: int = 500,
    threads: int = 1,
    gt: GroundTruth | None = None,
    stages: dict | None = None,
) -> tuple[RoarIndex, BipartiteGraph]:
    """Build the query-guided index from base data and construction queries.

    Pass ``gt`` to reuse precomputed ``nq``-NN ground truth of the
    construction queries. If ``stages`` is a dict, the intermediate
    projected graph is stored under ``"projected"``.
    """
    check_compatible(base, queries)
    if base.count == 0:
        raise ContractError("cannot build an index over an empty base set")
    if base.count == 1:
        empty = RoarIndex(np.zeros((1, 2 * m), np.int32), np.zeros(1, np.int32), 0, base.metric,
                          base.dim, _params(nq, m, l))
        anchors = np.zeros(queries.count, dtype=np.int32)
        bip = BipartiteGraph(np.zeros(queries.count + 1, np.int64), np.zeros(0, np.int32), anchors,
                             np.zeros(queries.count, np.float32), queries.data)
        return empty, bip
    nq_eff = min(nq, base.count)
    t0 = time.perf_counter()
    if gt is None:
        gt = exact_knn(base, queries, nq_eff, threads)
    elif gt.k < nq_eff:
        raise ContractError(f"ground truth has k={gt.k} < Nq={nq_eff}")
    else:
        gt = gt.head(nq_eff)
    t1 = time.perf_counter()
    bip = build_bipartite(base, gt, queries)
    projected = project(bip, base, m, l)
    t2 = time.perf_counter()
    if stages is not None:
        stages["projected"] = projected
    index = enhance_connectivity(projected, base, m, l)
    index.params = _params(nq, m, l)
    t3 = time.perf_counter()
    log.info("build: ground truth %.1fs, bipartite+projection %.1fs, enhancement %.1fs",
             t1 - t0, t2 - t1, t3 - t2)
    return index, bip


def build_baseline_graph(base: VectorSet, m: int = 35, l: int = 500, threads: int = 1) -> RoarIndex:
    """Query-agnostic comparator built with the same pruning rule.

    Each node prunes its exact ``l`` nearest base neighbors (no fulfilling),
    reverse edges are attempted, then the same enhancement pass runs.
    """
    if base.count == 0:
        raise ContractError("cannot build an index over an empty base set")
    params = _params(0, m, l)
    if base.count == 1:
        return RoarIndex(np.zeros((1, 2 * m), np.int32), np.zeros(1, np.int32), 0, base.metric,
                         base.dim, params)
    k = min(l, base.count - 1)
    knn = self_knn(base, k, threads)
    adj, deg = _kernels.prune_knn(
        base.data, int(base.metric), knn.ids.astype(np.int32), knn.dists, m, True
    )
    pruned = RoarIndex(adj, deg, medoid(base), base.metric, base.dim, params)
    index = enhance_connectivity(pruned, base, m, l)
    index.params = params
    return index
