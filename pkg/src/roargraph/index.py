"""Graph containers: the query-base bipartite graph and the base-only index."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from roargraph.core import ContractError, Metric


@dataclass(frozen=True)
class BuildParams:
    nq: int = 100
    m: int = 35
    l: int = 500


class RoarIndex:
    """Directed base-node graph stored as a padded adjacency matrix.

    Row ``i`` of ``adjacency`` holds node i's out-neighbors in order; only the
    first ``degrees[i]`` entries are meaningful. Rows are over-allocated so
    insertions append without copying the whole graph every time.
    """

    def __init__(
        self,
        adjacency: np.ndarray,
        degrees: np.ndarray,
        medoid: int,
        metric: Metric,
        dim: int,
        params: BuildParams = BuildParams(),
        deleted: np.ndarray | None = None,
    ):
        adjacency = np.ascontiguousarray(adjacency, dtype=np.int32)
        degrees = np.ascontiguousarray(degrees, dtype=np.int32)
        if adjacency.ndim != 2 or adjacency.shape[0] != degrees.shape[0]:
            raise ContractError("adjacency rows and degrees disagree")
        self._adj = adjacency
        self._deg = degrees
        self._n = int(degrees.shape[0])
        self._deleted = np.zeros(self._n, dtype=np.bool_)
        if deleted is not None:
            self._deleted[:] = np.asarray(deleted, dtype=np.bool_)
        self.medoid = int(medoid)
        self.metric = Metric.parse(metric)
        self.dim = int(dim)
        self.params = params

    # -- construction helpers -------------------------------------------

    @classmethod
    def from_lists(cls, lists, medoid, metric, dim, params=BuildParams(), width=None):
        n = len(lists)
        widest = max((len(x) for x in lists), default=0)
        width = max(width or 0, widest, 1)
        adj = np.zeros((n, width), dtype=np.int32)
        deg = np.zeros(n, dtype=np.int32)
        for i, nb in enumerate(lists):
            adj[i, : len(nb)] = nb
            deg[i] = len(nb)
        return cls(adj, deg, medoid, metric, dim, params)

    @classmethod
    def from_csr(cls, offsets, ids, medoid, metric, dim, params=BuildParams(), deleted=None):
        offsets = np.asarray(offsets, dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int32)
        n = offsets.shape[0] - 1
        deg = np.diff(offsets).astype(np.int32)
        width = max(int(deg.max()) if n else 0, 2 * params.m, 1)
        adj = np.zeros((n, width), dtype=np.int32)
        if n:
            rows = np.repeat(np.arange(n), deg)
            cols = np.arange(ids.shape[0]) - np.repeat(offsets[:-1], deg)
            adj[rows, cols] = ids
        return cls(adj, deg, medoid, metric, dim, params, deleted)

    def to_csr(self) -> tuple[np.ndarray, np.ndarray]:
        deg = self.degrees
        offsets = np.zeros(self._n + 1, dtype=np.int64)
        np.cumsum(deg, out=offsets[1:])
        mask = np.arange(self.width)[None, :] < deg[:, None]
        return offsets, self.adjacency[mask].astype(np.int32)

    def copy(self) -> "RoarIndex":
        return RoarIndex(
            self.adjacency.copy(),
            self.degrees.copy(),
            self.medoid,
            self.metric,
            self.dim,
            self.params,
            self.deleted.copy(),
        )

    # -- views ----------------------------------------------------------

    @property
    def n(self) -> int:
        return self._n

    def __len__(self) -> int:
        return self._n

    @property
    def width(self) -> int:
        return int(self._adj.shape[1])

    @property
    def adjacency(self) -> np.ndarray:
        return self._adj[: self._n]

    @property
    def degrees(self) -> np.ndarray:
        return self._deg[: self._n]

    @property
    def deleted(self) -> np.ndarray:
        return self._deleted[: self._n]

    @property
    def tombstones(self) -> np.ndarray:
        return np.flatnonzero(self.deleted)

    @property
    def live_count(self) -> int:
        return int(self._n - self.deleted.sum())

    def neighbors(self, node: int) -> np.ndarray:
        return self._adj[node, : self._deg[node]]

    def edge_count(self) -> int:
        return int(self.degrees.sum())

    # -- mutation (update path) -------------------------------------------

    def _reserve(self, rows: int) -> None:
        if rows <= self._adj.shape[0]:
            return
        cap = max(rows, 2 * self._adj.shape[0], 16)
        adj = np.zeros((cap, self.width), dtype=np.int32)
        adj[: self._n] = self._adj[: self._n]
        deg = np.zeros(cap, dtype=np.int32)
        deg[: self._n] = self._deg[: self._n]
        dead = np.zeros(cap, dtype=np.bool_)
        dead[: self._n] = self._deleted[: self._n]
        self._adj, self._deg, self._deleted = adj, deg, dead

    def add_node(self) -> int:
        self._reserve(self._n + 1)
        self._deg[self._n] = 0
        self._deleted[self._n] = False
        self._n += 1
        return self._n - 1

    def set_neighbors(self, node: int, nbrs) -> None:
        nbrs = np.asarray(nbrs, dtype=np.int32)
        if nbrs.shape[0] > self.width:
            raise ContractError(f"{nbrs.shape[0]} neighbors exceed row width {self.width}")
        self._adj[node, : nbrs.shape[0]] = nbrs
        self._deg[node] = nbrs.shape[0]

    def mark_deleted(self, node: int) -> bool:
        """Tombstone ``node``; returns False if it was already deleted."""
        if not 0 <= node < self._n:
            raise ContractError(f"node {node} out of range [0, {self._n})")
        if self._deleted[node]:
            return False
        self._deleted[node] = True
        return True

    # -- checks -----------------------------------------------------------

    def _csgraph(self):
        offsets, ids = self.to_csr()
        return sparse.csr_matrix((np.ones(ids.shape[0], dtype=np.int8), ids, offsets), shape=(self._n, self._n))

    def validate(self, max_degree: int | None = None) -> None:
        """Raise ContractError on out-of-range, self or duplicate edges."""
        if self._n and not 0 <= self.medoid < self._n:
            raise ContractError(f"medoid {self.medoid} out of range")
        deg = self.degrees
        if max_degree is not None and deg.size and deg.max() > max_degree:
            bad = int(np.argmax(deg))
            raise ContractError(f"node {bad} has degree {int(deg[bad])} > {max_degree}")
        offsets, ids = self.to_csr()
        if ids.size == 0:
            return
        rows = np.repeat(np.arange(self._n), deg)
        if ids.min() < 0 or ids.max() >= self._n:
            bad = rows[(ids < 0) | (ids >= self._n)][0]
            raise ContractError(f"node {bad} has an out-of-range neighbor")
        if (ids == rows).any():
            raise ContractError(f"node {rows[ids == rows][0]} links to itself")
        key = np.sort(rows.astype(np.int64) * self._n + ids)
        dup = key[1:] == key[:-1]
        if dup.any():
            raise ContractError(f"node {key[1:][dup][0] // self._n} has duplicate neighbors")

    def reachable_from(self, start: int | None = None) -> np.ndarray:
        """Boolean mask of nodes reachable by BFS from ``start`` (default: medoid)."""
        seen = np.zeros(self._n, dtype=np.bool_)
        if self._n == 0:
            return seen
        start = self.medoid if start is None else start
        order = csgraph.breadth_first_order(self._csgraph(), start, directed=True, return_predecessors=False)
        seen[order] = True
        return seen

    def hop_distance(self, src: int, dst: int) -> int:
        """Shortest path length in edges, or -1 if unreachable."""
        d = csgraph.shortest_path(self._csgraph(), directed=True, unweighted=True, indices=src)
        return -1 if np.isinf(d[dst]) else int(d[dst])


class BipartiteGraph:
    """Query nodes link to their nearest base nodes; each query's closest base
    node (its anchor) links back to it.

    ``query_out(t)`` is query t's retained base neighbors (nearest first) and
    ``base_out(x)`` lists the queries anchored at base node x. The query
    vectors are kept because insertion and bipartite search need distances
    to query nodes.
    """

    def __init__(self, q_offsets, q_ids, anchors, anchor_dists, queries, extra=None):
        self.q_offsets = np.ascontiguousarray(q_offsets, dtype=np.int64)
        self.q_ids = np.ascontiguousarray(q_ids, dtype=np.int32)
        self.anchors = np.ascontiguousarray(anchors, dtype=np.int32)
        self.anchor_dists = np.ascontiguousarray(anchor_dists, dtype=np.float32)
        self.queries = np.ascontiguousarray(queries, dtype=np.float32)
        nq = self.anchors.shape[0]
        if self.q_offsets.shape[0] != nq + 1 or self.queries.shape[0] != nq:
            raise ContractError("bipartite arrays disagree on the number of queries")
        # neighbors appended to query nodes by insertions
        self.extra: dict[int, list[int]] = {} if extra is None else extra
        self._base_cache = None

    @property
    def query_count(self) -> int:
        return int(self.anchors.shape[0])

    def query_out(self, t: int) -> np.ndarray:
        own = self.q_ids[self.q_offsets[t] : self.q_offsets[t + 1]]
        more = self.extra.get(int(t))
        if more:
            return np.concatenate([own, np.asarray(more, dtype=np.int32)])
        return own

    def add_query_neighbor(self, t: int, node: int) -> None:
        self.extra.setdefault(int(t), []).append(int(node))

    def base_csr(self, n_base: int) -> tuple[np.ndarray, np.ndarray]:
        """base->query adjacency in CSR form, query ids ascending per row."""
        if self._base_cache is not None and self._base_cache[0].shape[0] == n_base + 1:
            return self._base_cache
        order = np.argsort(self.anchors, kind="stable").astype(np.int32)
        counts = np.bincount(self.anchors, minlength=n_base)[:n_base]
        offsets = np.zeros(n_base + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        self._base_cache = (offsets, order)
        return self._base_cache

    def base_out(self, x: int) -> np.ndarray:
        rows = int(self.anchors.max(initial=-1)) + 1
        if x >= rows:
            return np.zeros(0, dtype=np.int32)
        offsets, order = self.base_csr(rows)
        return order[offsets[x] : offsets[x + 1]]

    def has_in_edge(self, n_base: int) -> np.ndarray:
        """Mask of base nodes that anchor at least one query."""
        mask = np.zeros(n_base, dtype=np.bool_)
        anchors = self.anchors[self.anchors < n_base]
        mask[anchors] = True
        return mask

    def query_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """query->base CSR including neighbors added by insertions."""
        if not self.extra:
            return self.q_offsets, self.q_ids
        lists = [self.query_out(t) for t in range(self.query_count)]
        lens = np.array([len(x) for x in lists], dtype=np.int64)
        offsets = np.zeros(self.query_count + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        return offsets, np.concatenate(lists).astype(np.int32)

    def max_query_degree(self) -> int:
        offsets, _ = self.query_csr()
        return int(np.diff(offsets).max(initial=0))
