"""FastAPI application serving one loaded index.

Searches run concurrently; inserts, deletes and saves take the write side
of a readers-writer lock, so they never overlap a search.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from roargraph.core import ContractError, VectorSet
from roargraph.index import BipartiteGraph, RoarIndex
from roargraph.io import load_index, read_fbin, save_index, write_fbin
from roargraph.search import SearchGraph, search_graph
from roargraph.service.schemas import (
    DeleteRequest,
    DeleteResponse,
    Hit,
    IndexInfo,
    InsertRequest,
    InsertResponse,
    SaveRequest,
    SaveResponse,
    SearchRequest,
    SearchResponse,
)
from roargraph.update import delete, insert


class RWLock:
    """Many readers or one writer; waiting writers block new readers."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._waiting = 0

    @contextmanager
    def read(self):
        with self._cond:
            while self._writer or self._waiting:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            self._waiting += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._waiting -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


class IndexState:
    def __init__(self, index: RoarIndex, base: VectorSet, bipartite: BipartiteGraph | None,
                 index_path=None, base_path=None):
        self.index = index
        self.base = base
        self.bipartite = bipartite
        self.index_path = index_path
        self.base_path = base_path
        self.lock = RWLock()

    @classmethod
    def load(cls, index_path, base_path) -> "IndexState":
        index, bip = load_index(index_path)
        base = read_fbin(base_path, index.metric)
        if base.count != index.n or base.dim != index.dim:
            raise ContractError("base file does not match the index")
        return cls(index, base, bip, str(index_path), str(base_path))


def _matrix(rows, dim: int) -> np.ndarray:
    data = np.asarray(rows, dtype=np.float32)
    if data.ndim != 2 or data.shape[1] != dim:
        raise HTTPException(422, f"vectors must have dimension {dim}")
    if not np.isfinite(data).all():
        raise HTTPException(422, "vectors contain NaN or Inf")
    return data


def build_app(state: IndexState) -> FastAPI:
    app = FastAPI(title="roargraph")
    app.state.index = state

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/index", response_model=IndexInfo)
    def info():
        with state.lock.read():
            idx = state.index
            return IndexInfo(
                nodes=idx.n, live=idx.live_count, dim=idx.dim, metric=idx.metric.label,
                medoid=idx.medoid, edges=idx.edge_count(), nq=idx.params.nq, m=idx.params.m,
                l=idx.params.l, has_bipartite=state.bipartite is not None,
            )

    @app.post("/search", response_model=SearchResponse)
    def search(req: SearchRequest):
        if req.k > req.L:
            raise HTTPException(422, f"k={req.k} exceeds L={req.L}")
        with state.lock.read():
            data = _matrix(req.vectors, state.index.dim)
            if state.index.n == 0:
                raise HTTPException(409, "index is empty")
            graph = SearchGraph.of(state.index, state.base)
            results = []
            for row in data:
                rep = search_graph(graph, state.base.prepare_query(row), req.L, req.k)
                results.append(Hit(ids=rep.ids.tolist(), dists=rep.dists.tolist(),
                                   hops=rep.hops, visited=rep.visited))
        return SearchResponse(results=results)

    @app.post("/insert", response_model=InsertResponse)
    def insert_vectors(req: InsertRequest):
        if state.bipartite is None:
            raise HTTPException(409, "index was saved without its bipartite graph")
        with state.lock.write():
            data = _matrix(req.vectors, state.index.dim)
            reports = [insert(state.index, state.bipartite, state.base, row, req.L) for row in data]
        return InsertResponse(ids=[r.node for r in reports], fallbacks=sum(r.fallback for r in reports))

    @app.post("/delete", response_model=DeleteResponse)
    def delete_ids(req: DeleteRequest):
        with state.lock.write():
            bad = [i for i in req.ids if not 0 <= i < state.index.n]
            if bad:
                raise HTTPException(404, f"unknown node ids {bad}")
            reports = [delete(state.index, i) for i in req.ids]
        return DeleteResponse(deleted=[r.node for r in reports if r.deleted],
                              warnings=[r.warning for r in reports if r.warning])

    @app.post("/save", response_model=SaveResponse)
    def save(req: SaveRequest):
        index_path = req.index_path or state.index_path
        base_path = req.base_path or state.base_path
        if not index_path or not base_path:
            raise HTTPException(422, "no target paths known")
        with state.lock.write():
            save_index(state.index, index_path, state.bipartite)
            write_fbin(state.base, base_path)
        return SaveResponse(index_path=index_path, base_path=base_path)

    @app.exception_handler(ContractError)
    def contract_error(_request, exc: ContractError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    return app


def create_app(index_path, base_path) -> FastAPI:
    return build_app(IndexState.load(index_path, base_path))
