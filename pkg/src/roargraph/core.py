"""Vector containers, metrics and the shared distance semantics.

Every metric is exposed as a dissimilarity where smaller means closer:
squared L2, negated inner product, and ``1 - dot`` on unit-normalized
vectors for cosine.
"""

from __future__ import annotations

import enum

import numpy as np

from roargraph import _kernels


class ContractError(ValueError):
    """Raised when an operation is called outside its preconditions."""


class Metric(enum.IntEnum):
    L2 = 0
    INNER_PRODUCT = 1
    COSINE = 2

    @classmethod
    def parse(cls, value: "str | int | Metric") -> "Metric":
        if isinstance(value, Metric):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "l2": cls.L2,
            "euclidean": cls.L2,
            "ip": cls.INNER_PRODUCT,
            "inner_product": cls.INNER_PRODUCT,
            "mips": cls.INNER_PRODUCT,
            "cosine": cls.COSINE,
            "cos": cls.COSINE,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ContractError(f"unknown metric {value!r}") from None

    @property
    def label(self) -> str:
        return {Metric.L2: "l2", Metric.INNER_PRODUCT: "ip", Metric.COSINE: "cosine"}[self]


def normalize_rows(data: np.ndarray) -> np.ndarray:
    """Unit-normalize rows in float32; zero rows are left as zeros."""
    data = np.asarray(data, dtype=np.float32)
    norms = np.linalg.norm(data, axis=1, keepdims=True).astype(np.float32)
    norms[norms == 0] = 1.0
    return (data / norms).astype(np.float32)


class VectorSet:
    """Dense ``count x dim`` float32 matrix with an attached metric.

    Cosine sets are normalized on construction so the kernels can use a
    plain dot product. The set is treated as read-only except through
    :meth:`extend`, which the update path uses under exclusive access.
    """

    def __init__(self, data, metric: "Metric | str" = Metric.L2):
        data = np.asarray(data)
        if data.ndim != 2:
            raise ContractError(f"expected a 2-D array, got shape {data.shape}")
        data = np.ascontiguousarray(data, dtype=np.float32)
        if not np.isfinite(data).all():
            raise ContractError("vector data contains NaN or Inf")
        self.metric = Metric.parse(metric)
        if self.metric is Metric.COSINE and data.shape[0]:
            data = np.ascontiguousarray(normalize_rows(data))
        self._buf = data
        self._count = data.shape[0]

    @classmethod
    def empty(cls, dim: int, metric: "Metric | str" = Metric.L2) -> "VectorSet":
        return cls(np.zeros((0, dim), dtype=np.float32), metric)

    @property
    def data(self) -> np.ndarray:
        view = self._buf[: self._count]
        view.flags.writeable = False
        return view

    @property
    def count(self) -> int:
        return self._count

    @property
    def dim(self) -> int:
        return int(self._buf.shape[1])

    def __len__(self) -> int:
        return self._count

    def __getitem__(self, idx) -> np.ndarray:
        return self.data[idx]

    def __repr__(self) -> str:
        return f"VectorSet(count={self.count}, dim={self.dim}, metric={self.metric.label})"

    def subset(self, idx) -> "VectorSet":
        return VectorSet(self.data[idx], self.metric)

    def extend(self, vectors) -> range:
        """Append vectors in place and return their new ids."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float32))
        if vectors.shape[1] != self.dim:
            raise ContractError(f"dimension mismatch: {vectors.shape[1]} != {self.dim}")
        if not np.isfinite(vectors).all():
            raise ContractError("vector data contains NaN or Inf")
        if self.metric is Metric.COSINE:
            vectors = normalize_rows(vectors)
        n = vectors.shape[0]
        if self._count + n > self._buf.shape[0]:
            cap = max(self._count + n, 2 * self._buf.shape[0], 16)
            buf = np.empty((cap, self.dim), dtype=np.float32)
            buf[: self._count] = self._buf[: self._count]
            self._buf = buf
        self._buf[self._count : self._count + n] = vectors
        first = self._count
        self._count += n
        return range(first, self._count)

    def prepare_query(self, query) -> np.ndarray:
        """Cast a query to float32 and apply the metric's normalization."""
        q = np.ascontiguousarray(query, dtype=np.float32).reshape(-1)
        if q.shape[0] != self.dim:
            raise ContractError(f"query dimension {q.shape[0]} != index dimension {self.dim}")
        if not np.isfinite(q).all():
            raise ContractError("query contains NaN or Inf")
        if self.metric is Metric.COSINE:
            q = normalize_rows(q[None, :])[0]
        return q


def check_compatible(a: VectorSet, b: VectorSet) -> None:
    if a.dim != b.dim:
        raise ContractError(f"dimension mismatch: {a.dim} != {b.dim}")
    if a.metric is not b.metric:
        raise ContractError(f"metric mismatch: {a.metric.label} != {b.metric.label}")


def dist(metric: "Metric | str", a, b) -> float:
    """Distance between two vectors; smaller is closer for every metric.

    Cosine inputs are expected to be unit-normalized already (VectorSet
    does this at load time).
    """
    metric = Metric.parse(metric)
    a = np.ascontiguousarray(a, dtype=np.float32).reshape(-1)
    b = np.ascontiguousarray(b, dtype=np.float32).reshape(-1)
    if a.shape != b.shape:
        raise ContractError(f"dimension mismatch: {a.shape[0]} != {b.shape[0]}")
    return float(_kernels.distance(a, b, int(metric)))


def medoid(base: VectorSet) -> int:
    """Id of the base vector nearest to the centroid (ties to the smaller id)."""
    if base.count == 0:
        raise ContractError("medoid of an empty vector set")
    centroid = base.data.astype(np.float64).mean(axis=0).astype(np.float32)
    if base.metric is Metric.COSINE:
        centroid = normalize_rows(centroid[None, :])[0]
    d = _kernels.distances_to(base.data, centroid, int(base.metric))
    return int(np.argmin(d))
