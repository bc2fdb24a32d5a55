"""Binary readers and writers.

Vector files use the big-ann-benchmarks layout: a little-endian
``uint32 count, uint32 dim`` header followed by ``count * dim`` elements
(.fbin float32, .u8bin uint8, .ibin uint32). A ground-truth file is an ids
block followed by a distances block, each with its own header.

Index file layout (little-endian, version 1)::

    magic "ROAR" | version u32 | metric u8 | dim u32 | N u64 | medoid u64
    | nq u32 | m u32 | l u32
    | offsets (N+1) x u64 | neighbor ids x u32
    | tombstone bitmap ceil(N/8) bytes, bit i = node i (LSB first)
    | has_bipartite u8
    [ | Q u64 | query->base offsets (Q+1) x u64 | ids x u32
      | base->query offsets (N+1) x u64 | ids x u32
      | anchor distances Q x f32 | query vectors Q x dim x f32 ]
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from roargraph.core import ContractError, Metric, VectorSet
from roargraph.index import BipartiteGraph, BuildParams, RoarIndex

MAGIC = b"ROAR"
FORMAT_VERSION = 1

_U32_MAX = 2**32 - 1


class LoadError(ValueError):
    """A file could not be parsed or failed validation."""


class TruncatedFileError(LoadError):
    pass


class FormatError(LoadError):
    pass


@dataclass(eq=False)
class GroundTruth:
    """Per-query neighbor ids and distances, nearest first."""

    ids: np.ndarray
    dists: np.ndarray

    def __post_init__(self) -> None:
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        self.dists = np.ascontiguousarray(self.dists, dtype=np.float32)
        if self.ids.ndim != 2 or self.ids.shape != self.dists.shape:
            raise ContractError("ground-truth ids and dists must be matching 2-D arrays")

    @property
    def query_count(self) -> int:
        return int(self.ids.shape[0])

    @property
    def k(self) -> int:
        return int(self.ids.shape[1])

    def validate(self) -> None:
        if self.k < 1:
            raise LoadError("ground truth needs k >= 1")
        if self.ids.size and self.ids.min() < 0:
            raise LoadError("negative neighbor id")
        if (np.diff(self.dists, axis=1) < 0).any():
            raise LoadError("ground-truth row not sorted by distance")
        srt = np.sort(self.ids, axis=1)
        if (srt[:, 1:] == srt[:, :-1]).any():
            raise LoadError("duplicate id within a ground-truth row")

    def head(self, k: int) -> "GroundTruth":
        if not 1 <= k <= self.k:
            raise ContractError(f"k={k} outside [1, {self.k}]")
        return GroundTruth(self.ids[:, :k], self.dists[:, :k])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GroundTruth)
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.dists, other.dists)
        )


# -- vector files ----------------------------------------------------------

_DTYPES = {".fbin": np.float32, ".u8bin": np.uint8, ".ibin": np.uint32}


def _dtype_for(path, dtype=None):
    if dtype is not None:
        return np.dtype(dtype)
    suffix = Path(path).suffix.lower()
    return np.dtype(_DTYPES.get(suffix, np.float32))


def _read_block(fh, dtype, path) -> np.ndarray:
    header = fh.read(8)
    if len(header) < 8:
        raise TruncatedFileError(f"{path}: missing header")
    count, dim = struct.unpack("<II", header)
    nbytes = count * dim * dtype.itemsize
    payload = fh.read(nbytes)
    if len(payload) < nbytes:
        raise TruncatedFileError(
            f"{path}: header declares {count}x{dim} but only {len(payload)} of {nbytes} payload bytes present"
        )
    return np.frombuffer(payload, dtype=dtype.newbyteorder("<")).reshape(count, dim).astype(dtype)


def _write_block(fh, array: np.ndarray, dtype) -> None:
    array = np.asarray(array)
    count, dim = array.shape
    if count > _U32_MAX or dim > _U32_MAX:
        raise ContractError("count or dim does not fit in uint32")
    fh.write(struct.pack("<II", count, dim))
    fh.write(np.ascontiguousarray(array, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())


def read_matrix(path, dtype=None) -> np.ndarray:
    """Read any bin file into an array of its element type."""
    dtype = _dtype_for(path, dtype)
    with open(path, "rb") as fh:
        out = _read_block(fh, dtype, path)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return out


def write_matrix(array: np.ndarray, path, dtype=None) -> None:
    dtype = _dtype_for(path, dtype)
    with open(path, "wb") as fh:
        _write_block(fh, array, dtype)


def read_fbin(path, metric: "Metric | str" = Metric.L2) -> VectorSet:
    """Load vectors (.fbin or .u8bin) as a float32 VectorSet."""
    raw = read_matrix(path)
    if raw.dtype == np.float32 and not np.isfinite(raw).all():
        raise FormatError(f"{path}: non-finite values")
    return VectorSet(raw.astype(np.float32), metric)


def write_fbin(vectors: "VectorSet | np.ndarray", path) -> None:
    data = vectors.data if isinstance(vectors, VectorSet) else np.asarray(vectors, dtype=np.float32)
    write_matrix(data, path, np.float32)


def read_ibin(path) -> np.ndarray:
    return read_matrix(path, np.uint32)


def write_ibin(ids: np.ndarray, path) -> None:
    write_matrix(np.asarray(ids), path, np.uint32)


# -- ground truth ----------------------------------------------------------


def write_gt(gt: GroundTruth, path) -> None:
    gt.validate()
    if gt.ids.size and gt.ids.max() > _U32_MAX:
        raise ContractError("neighbor id does not fit in uint32")
    with open(path, "wb") as fh:
        _write_block(fh, gt.ids, np.uint32)
        _write_block(fh, gt.dists, np.float32)


def read_gt(path) -> GroundTruth:
    with open(path, "rb") as fh:
        ids = _read_block(fh, np.dtype(np.uint32), path)
        dists = _read_block(fh, np.dtype(np.float32), path)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after distances block")
    if ids.shape != dists.shape:
        raise FormatError(f"{path}: ids block {ids.shape} and dists block {dists.shape} disagree")
    gt = GroundTruth(ids.astype(np.int64), dists)
    gt.validate()
    return gt


# -- index -----------------------------------------------------------------


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, nbytes: int) -> bytes:
        if self.pos + nbytes > len(self.buf):
            raise TruncatedFileError(f"{self.path}: unexpected end of file")
        out = self.buf[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype).copy()


def _u64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<u8").tobytes()


def _u32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<u4").tobytes()


def index_bytes(index: RoarIndex, bipartite: BipartiteGraph | None = None) -> bytes:
    n = index.n
    offsets, ids = index.to_csr()
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise ContractError("index has neighbor ids out of range")
    p = index.params
    parts = [
        MAGIC,
        struct.pack("<IBIQQIII", FORMAT_VERSION, int(index.metric), index.dim, n, index.medoid, p.nq, p.m, p.l),
        _u64(offsets),
        _u32(ids),
        np.packbits(index.deleted, bitorder="little").tobytes(),
    ]
    if bipartite is None:
        parts.append(b"\x00")
    else:
        q_off, q_ids = bipartite.query_csr()
        b_off, b_ids = bipartite.base_csr(n)
        queries = np.ascontiguousarray(bipartite.queries, dtype="<f4")
        if queries.shape[1] != index.dim:
            raise ContractError("bipartite query vectors do not match the index dimension")
        parts += [
            b"\x01",
            struct.pack("<Q", bipartite.query_count),
            _u64(q_off),
            _u32(q_ids),
            _u64(b_off),
            _u32(b_ids),
            np.ascontiguousarray(bipartite.anchor_dists, dtype="<f4").tobytes(),
            queries.tobytes(),
        ]
    return b"".join(parts)


def save_index(index: RoarIndex, path, bipartite: BipartiteGraph | None = None) -> None:
    """Write the index (and optionally its bipartite graph) atomically."""
    data = index_bytes(index, bipartite)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def parse_index(buf: bytes, path="<bytes>") -> tuple[RoarIndex, BipartiteGraph | None]:
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a RoarGraph index")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    metric_code, dim, n, medoid, nq, m, l = r.unpack("<BIQQIII")
    try:
        metric = Metric(metric_code)
    except ValueError:
        raise FormatError(f"{path}: unknown metric code {metric_code}") from None
    if n and medoid >= n:
        raise FormatError(f"{path}: medoid {medoid} out of range")
    offsets = r.array(np.uint64, n + 1).astype(np.int64)
    if offsets[0] != 0 or (np.diff(offsets) < 0).any():
        raise FormatError(f"{path}: malformed CSR offsets")
    ids = r.array(np.uint32, int(offsets[-1]))
    if ids.size and ids.max() >= n:
        raise FormatError(f"{path}: neighbor id out of range")
    bitmap = np.frombuffer(r.take((n + 7) // 8), dtype=np.uint8)
    deleted = np.unpackbits(bitmap, count=n, bitorder="little").astype(np.bool_)
    params = BuildParams(nq=nq, m=m, l=l)
    index = RoarIndex.from_csr(offsets, ids.astype(np.int32), medoid, metric, dim, params, deleted)
    (flag,) = r.unpack("<B")
    bipartite = None
    if flag == 1:
        (q,) = r.unpack("<Q")
        q_off = r.array(np.uint64, q + 1).astype(np.int64)
        q_ids = r.array(np.uint32, int(q_off[-1]))
        b_off = r.array(np.uint64, n + 1).astype(np.int64)
        b_ids = r.array(np.uint32, int(b_off[-1]))
        anchor_ds = r.array(np.float32, q)
        queries = r.array(np.float32, q * dim).reshape(q, dim)
        if q_ids.size and q_ids.max() >= n:
            raise FormatError(f"{path}: bipartite base id out of range")
        if b_ids.size and b_ids.max() >= q:
            raise FormatError(f"{path}: bipartite query id out of range")
        if b_ids.shape[0] != q or (q and (np.bincount(b_ids, minlength=q) != 1).any()):
            raise FormatError(f"{path}: every query needs exactly one base in-neighbor")
        anchors = np.empty(q, dtype=np.int32)
        anchors[b_ids] = np.repeat(np.arange(n, dtype=np.int32), np.diff(b_off))
        bipartite = BipartiteGraph(q_off, q_ids.astype(np.int32), anchors, anchor_ds, queries)
    elif flag != 0:
        raise FormatError(f"{path}: bad bipartite flag {flag}")
    if r.pos != len(buf):
        raise FormatError(f"{path}: trailing bytes")
    return index, bipartite


def load_index(path) -> tuple[RoarIndex, BipartiteGraph | None]:
    with open(path, "rb") as fh:
        return parse_index(fh.read(), path)
