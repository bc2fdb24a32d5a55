"""Insertion through the saved bipartite graph, and tombstone deletion.

Both operations mutate the index in place and assume the caller holds
exclusive access to the index, its bipartite graph and the base storage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from roargraph import _kernels
from roargraph.core import ContractError, VectorSet
from roargraph.index import BipartiteGraph, RoarIndex
from roargraph.search import _scratch

log = logging.getLogger(__name__)


@dataclass
class InsertReport:
    node: int
    # query node whose neighborhood seeded the candidates; -1 on fallback
    query: int
    pivot: int
    neighbors: np.ndarray
    fallback: bool


@dataclass
class DeleteReport:
    node: int
    deleted: bool
    warning: str | None = None


def _check(index: RoarIndex, base: VectorSet) -> None:
    if base.count != index.n:
        raise ContractError(f"base has {base.count} vectors but the index has {index.n} nodes")
    if base.dim != index.dim or base.metric is not index.metric:
        raise ContractError("base storage does not match the index dimension or metric")


def insert(
    index: RoarIndex,
    bipartite: BipartiteGraph,
    base: VectorSet,
    v,
    L: int | None = None,
) -> InsertReport:
    """Add vector ``v`` to the index and return where it was wired in.

    ``v`` is searched like a query. The nearest pool node that anchors at
    least one construction query is the pivot, and the pivot's query
    closest to ``v`` exposes its base neighbors as candidates. ``v`` keeps
    up to M of them (fulfilled), each chosen neighbor is offered ``v`` as a
    reverse edge (fulfilled re-selection on overflow), and ``v`` joins that
    query's neighbor list.
    """
    if bipartite is None:
        raise ContractError("insertion needs the bipartite graph saved with the index")
    _check(index, base)
    m = index.params.m
    L = L or index.params.l
    cap = max(2 * m, 1)
    q = base.prepare_query(v)

    if index.n:
        stamp, epoch = _scratch.next(index.n)
        pool, _, _, _ = _kernels.beam_search(
            index.adjacency, index.degrees, base.data, q, int(base.metric), index.medoid, L, stamp, epoch
        )
    else:
        pool = np.zeros(0, dtype=np.int32)

    eligible = bipartite.has_in_edge(index.n)
    pivot, t = -1, -1
    candidates = np.zeros(0, dtype=np.int32)
    for p in pool:
        if eligible[p]:
            pivot = int(p)
            break
    if pivot >= 0:
        anchored = bipartite.base_out(pivot)
        qd = _kernels.distances_to(bipartite.queries[anchored], q, int(base.metric))
        # nearest query, smaller id on ties (anchored ids are ascending)
        t = int(anchored[int(np.argmin(qd))])
        candidates = np.unique(bipartite.query_out(t))

    node = base.extend(q[None, :])[0]
    if index.width < cap:
        raise ContractError(f"index row width {index.width} below the degree cap {cap}")
    index.add_node()
    metric = int(base.metric)
    data = base.data

    fallback = candidates.shape[0] == 0
    if fallback:
        t = -1
        candidates = pool.astype(np.int32)
        log.warning("insert: no usable bipartite neighborhood for node %d, wiring from the search pool", node)
    ds = _kernels.distances_to(data[candidates], data[node], metric)
    cids, cds = _kernels.sort_by_distance(candidates.astype(np.int32), ds)
    sel = _kernels.acquire_neighbors(cids, cds, data, metric, m, True)
    index.set_neighbors(node, sel)
    adj, deg = index.adjacency, index.degrees
    # overflowing lists are re-selected with fulfilling so they stay full;
    # a plain diversity prune strips the enhancement edges off hub nodes
    for p in sel:
        _kernels._reprune_with(adj, deg, int(p), node, data, metric, cap, True, True)
    if t >= 0:
        bipartite.add_query_neighbor(t, node)
    return InsertReport(node, t, pivot, sel.astype(np.int64), fallback)


def insert_many(index: RoarIndex, bipartite: BipartiteGraph, base: VectorSet, vectors,
                L: int | None = None) -> list[InsertReport]:
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float32))
    return [insert(index, bipartite, base, row, L) for row in vectors]


def delete(index: RoarIndex, node: int) -> DeleteReport:
    """Tombstone ``node``: it keeps routing but never appears in results."""
    if not index.mark_deleted(int(node)):
        msg = f"node {node} was already deleted"
        log.warning(msg)
        return DeleteReport(int(node), False, msg)
    return DeleteReport(int(node), True)
