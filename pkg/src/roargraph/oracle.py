"""Exact k-NN (ground truth) and recall."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numba import njit

from roargraph import _kernels
from roargraph.core import ContractError, Metric, VectorSet, check_compatible
from roargraph.io import GroundTruth

# queries per dense distance block
_CHUNK = 256


@njit(nogil=True, cache=True)
def _refine(base, queries, metric, row_off, cand, k, out_ids, out_ds, row0):
    """Exact distances for shortlisted candidates, then (distance, id) top-k."""
    for r in range(row_off.shape[0] - 1):
        c = cand[row_off[r] : row_off[r + 1]]
        q = queries[r]
        ds = np.empty(c.shape[0], dtype=np.float32)
        for i in range(c.shape[0]):
            ds[i] = _kernels.distance(base[c[i]], q, metric)
        ids, ds = _kernels.sort_by_distance(c.astype(np.int32), ds)
        out_ids[row0 + r, :] = ids[:k]
        out_ds[row0 + r, :] = ds[:k]


def _approx_block(base: np.ndarray, base_sq: np.ndarray, q: np.ndarray, metric: Metric):
    dots = q @ base.T
    if metric is Metric.L2:
        qsq = np.einsum("ij,ij->i", q, q)
        approx = qsq[:, None] + base_sq[None, :] - 2.0 * dots
        slack = 1e-4 * (qsq[:, None] + base_sq.max()) + 1e-12
    elif metric is Metric.INNER_PRODUCT:
        approx = -dots
        qn = np.sqrt(np.einsum("ij,ij->i", q, q))
        slack = 1e-4 * qn[:, None] * np.sqrt(base_sq.max()) + 1e-12
    else:
        approx = 1.0 - dots
        slack = np.full((q.shape[0], 1), 1e-4)
    return approx, slack


def _knn_chunk(base, base_sq, queries, metric, k, out_ids, out_ds, row0):
    approx, slack = _approx_block(base, base_sq, queries, metric)
    # shortlist everything within float slack of the k-th approximate distance,
    # so exact ranking and id tie-breaking happen on kernel distances
    kth = np.partition(approx, k - 1, axis=1)[:, k - 1 : k]
    mask = approx <= kth + slack
    rows, cols = np.nonzero(mask)
    row_off = np.zeros(queries.shape[0] + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=queries.shape[0]), out=row_off[1:])
    _refine(base, queries, int(metric), row_off, cols.astype(np.int32), k, out_ids, out_ds, row0)


def exact_knn(base: VectorSet, queries: VectorSet, k: int, threads: int = 1) -> GroundTruth:
    """Exact k nearest base ids for every query, ties broken by smaller id.

    A dense matrix product shortlists candidates per query block; the
    shortlist is re-ranked with the same distance kernel the index uses,
    so the result does not depend on BLAS rounding or on the chunking.
    """
    check_compatible(base, queries)
    if not 1 <= k <= base.count:
        raise ContractError(f"k={k} outside [1, {base.count}]")
    nq = queries.count
    out_ids = np.empty((nq, k), dtype=np.int32)
    out_ds = np.empty((nq, k), dtype=np.float32)
    b = base.data
    base_sq = np.einsum("ij,ij->i", b, b)
    starts = range(0, nq, _CHUNK)

    def run(s):
        _knn_chunk(b, base_sq, queries.data[s : s + _CHUNK], base.metric, k, out_ids, out_ds, s)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return GroundTruth(out_ids.astype(np.int64), out_ds)


def self_knn(base: VectorSet, k: int, threads: int = 1) -> GroundTruth:
    """Exact k nearest *other* base vectors for every base vector."""
    if not 1 <= k < base.count:
        raise ContractError(f"k={k} outside [1, {base.count - 1}]")
    gt = exact_knn(base, base, k + 1, threads)
    ids = np.empty((base.count, k), dtype=np.int64)
    ds = np.empty((base.count, k), dtype=np.float32)
    for i in range(base.count):
        row = gt.ids[i]
        keep = row != i
        if keep.all():
            keep[-1] = False
        ids[i] = row[keep]
        ds[i] = gt.dists[i][keep]
    return GroundTruth(ids, ds)


def recall_at_k(result, truth, k: int) -> float:
    """|first k of result ∩ first k of truth| / k."""
    if k < 1:
        raise ContractError("recall needs k >= 1")
    truth = np.asarray(truth).reshape(-1)
    if truth.shape[0] < k:
        raise ContractError(f"truth has {truth.shape[0]} ids, fewer than k={k}")
    result = np.asarray(result).reshape(-1)[:k]
    return len(set(result.tolist()) & set(truth[:k].tolist())) / k


def mean_recall(results, gt: GroundTruth, k: int) -> float:
    """Average recall@k over queries; ``results`` is a sequence of id lists."""
    if len(results) != gt.query_count:
        raise ContractError(f"{len(results)} results for {gt.query_count} queries")
    if gt.query_count == 0:
        return float("nan")
    return float(np.mean([recall_at_k(r, gt.ids[i], k) for i, r in enumerate(results)]))
