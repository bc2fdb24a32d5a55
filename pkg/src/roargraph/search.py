"""Instrumented beam search."""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from roargraph import _kernels
from roargraph.core import ContractError, VectorSet
from roargraph.index import BipartiteGraph, RoarIndex
from roargraph.io import GroundTruth
from roargraph.oracle import recall_at_k

ONLINE = "online"
CONSTRUCTION = "construction"


@dataclass
class SearchReport:
    ids: np.ndarray
    dists: np.ndarray
    hops: int
    visited: int
    latency_us: float = 0.0
    visited_list: np.ndarray | None = None


@dataclass
class BatchResult:
    reports: list[SearchReport]
    L: int
    k: int
    seconds: float
    recall: float | None = None
    qps: float = field(init=False)
    mean_hops: float = field(init=False)
    mean_visited: float = field(init=False)

    def __post_init__(self) -> None:
        n = len(self.reports)
        self.qps = n / self.seconds if self.seconds > 0 else float("inf")
        self.mean_hops = float(np.mean([r.hops for r in self.reports])) if n else 0.0
        self.mean_visited = float(np.mean([r.visited for r in self.reports])) if n else 0.0

    @property
    def ids(self) -> list[np.ndarray]:
        return [r.ids for r in self.reports]


class _Scratch(threading.local):
    """Per-thread epoch-stamped visited marks, cleared in O(1) per query."""

    def __init__(self):
        self.stamp = np.zeros(0, dtype=np.int64)
        self.epoch = 0

    def next(self, n: int) -> tuple[np.ndarray, int]:
        if self.stamp.shape[0] < n:
            self.stamp = np.zeros(max(n, 2 * self.stamp.shape[0]), dtype=np.int64)
            self.epoch = 0
        self.epoch += 1
        return self.stamp, self.epoch


_scratch = _Scratch()


@dataclass
class SearchGraph:
    """Arrays the kernel walks: adjacency, vectors, result filter.

    ``adj`` is a padded ``n x width`` matrix, or a flat CSR id array when
    ``offsets`` is set.
    """

    adj: np.ndarray
    deg: np.ndarray
    data: np.ndarray
    excluded: np.ndarray
    entry: int
    metric: int
    offsets: np.ndarray | None = None

    @classmethod
    def of(cls, index: RoarIndex, base: VectorSet) -> "SearchGraph":
        if base.count < index.n:
            raise ContractError(f"base has {base.count} vectors but the index has {index.n} nodes")
        if base.dim != index.dim:
            raise ContractError(f"base dimension {base.dim} != index dimension {index.dim}")
        return cls(index.adjacency, index.degrees, base.data, index.deleted, index.medoid, int(index.metric))

    @classmethod
    def of_bipartite(cls, bip: BipartiteGraph, base: VectorSet, entry: int) -> "SearchGraph":
        """Searchable form of the bipartite graph.

        Query nodes only route: expanding a base node walks through each
        query it anchors straight to that query's base neighbors, so the
        pool holds base nodes only. Equivalently, base node x links to the
        union of ``query_out(t)`` over its anchored queries, unpruned.
        """
        n = base.count
        q_off, q_ids = bip.query_csr()
        b_off, b_ids = bip.base_csr(n)
        qdeg = np.diff(q_off)
        rows = []
        for x in range(n):
            ts = b_ids[b_off[x] : b_off[x + 1]]
            if ts.size == 0:
                rows.append(np.zeros(0, dtype=np.int32))
                continue
            nb = np.concatenate([q_ids[q_off[t] : q_off[t] + qdeg[t]] for t in ts])
            _, first = np.unique(nb, return_index=True)
            nb = nb[np.sort(first)]
            rows.append(nb[nb != x])
        deg = np.array([r.shape[0] for r in rows], dtype=np.int32)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(deg, out=offsets[1:])
        flat = np.concatenate(rows).astype(np.int32) if rows else np.zeros(0, dtype=np.int32)
        excluded = np.zeros(n, dtype=np.bool_)
        return cls(flat, deg, base.data, excluded, entry, int(base.metric), offsets)

    @property
    def n(self) -> int:
        return int(self.deg.shape[0])

    def walk(self, q: np.ndarray, L: int, stamp: np.ndarray, epoch: int):
        if self.offsets is None:
            return _kernels.beam_search(self.adj, self.deg, self.data, q, self.metric, self.entry, L, stamp, epoch)
        return _kernels.beam_search_csr(
            self.offsets, self.adj, self.deg, self.data, q, self.metric, self.entry, L, stamp, epoch
        )


def _check(L: int, k: int, n: int) -> None:
    if n == 0:
        raise ContractError("cannot search an empty index")
    if k < 1:
        raise ContractError("k must be >= 1")
    if k > L:
        raise ContractError(f"k={k} exceeds the pool size L={L}")


def search_graph(graph: SearchGraph, q: np.ndarray, L: int, k: int, mode: str = ONLINE) -> SearchReport:
    _check(L, k, graph.n)
    stamp, epoch = _scratch.next(graph.n)
    t0 = time.perf_counter()
    pids, pds, hops, visited = graph.walk(q, L, stamp, epoch)
    keep = ~graph.excluded[pids]
    ids = pids[keep][:k]
    ds = pds[keep][:k]
    latency = (time.perf_counter() - t0) * 1e6
    return SearchReport(
        ids=ids.astype(np.int64),
        dists=ds,
        hops=int(hops),
        visited=int(visited),
        latency_us=latency,
        visited_list=pids.astype(np.int64) if mode == CONSTRUCTION else None,
    )


def beam_search(
    index: RoarIndex, base: VectorSet, query, L: int, k: int, mode: str = ONLINE
) -> SearchReport:
    """Best-first search from the medoid with a candidate pool of size ``L``.

    Returns the ``k`` closest non-deleted nodes in the converged pool.
    Deleted nodes still route. In construction mode the report also
    carries the whole converged pool (at most ``L`` ids, deleted included).
    """
    if mode not in (ONLINE, CONSTRUCTION):
        raise ContractError(f"unknown search mode {mode!r}")
    return search_graph(SearchGraph.of(index, base), base.prepare_query(query), L, k, mode)


def batch_search_graph(
    graph: SearchGraph,
    queries: VectorSet,
    L: int,
    k: int,
    threads: int = 1,
    gt: GroundTruth | None = None,
) -> BatchResult:
    _check(L, k, graph.n)
    qdata = queries.data

    def one(i):
        return search_graph(graph, qdata[i], L, k)

    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            reports = list(pool.map(one, range(queries.count), chunksize=64))
    else:
        reports = [one(i) for i in range(queries.count)]
    seconds = time.perf_counter() - t0
    recall = None
    if gt is not None:
        if gt.query_count != queries.count:
            raise ContractError(f"ground truth covers {gt.query_count} queries, got {queries.count}")
        if gt.k < k:
            raise ContractError(f"ground truth depth {gt.k} < k={k}")
        recall = float(np.mean([recall_at_k(r.ids, gt.ids[i], k) for i, r in enumerate(reports)]))
    return BatchResult(reports, L, k, seconds, recall)


def batch_search(
    index: RoarIndex,
    base: VectorSet,
    queries: VectorSet,
    L: int,
    k: int,
    threads: int = 1,
    gt: GroundTruth | None = None,
) -> BatchResult:
    """Search every query; aggregates recall (if ``gt`` given), QPS and hops."""
    if queries.dim != index.dim:
        raise ContractError(f"query dimension {queries.dim} != index dimension {index.dim}")
    if queries.metric is not index.metric:
        raise ContractError("query metric differs from the index metric")
    return batch_search_graph(SearchGraph.of(index, base), queries, L, k, threads, gt)
