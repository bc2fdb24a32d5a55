"""Request and response bodies of the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class SearchRequest(BaseModel):
    vectors: list[list[float]] = Field(min_length=1)
    k: int = Field(10, ge=1)
    L: int = Field(100, ge=1)


class Hit(BaseModel):
    ids: list[int]
    dists: list[float]
    hops: int
    visited: int


class SearchResponse(BaseModel):
    results: list[Hit]


class InsertRequest(BaseModel):
    vectors: list[list[float]] = Field(min_length=1)
    L: int | None = Field(None, ge=1)


class InsertResponse(BaseModel):
    ids: list[int]
    fallbacks: int


class DeleteRequest(BaseModel):
    ids: list[int] = Field(min_length=1)


class DeleteResponse(BaseModel):
    deleted: list[int]
    warnings: list[str]


class IndexInfo(BaseModel):
    nodes: int
    live: int
    dim: int
    metric: str
    medoid: int
    edges: int
    nq: int
    m: int
    l: int
    has_bipartite: bool


class SaveRequest(BaseModel):
    index_path: str | None = None
    base_path: str | None = None


class SaveResponse(BaseModel):
    index_path: str
    base_path: str
