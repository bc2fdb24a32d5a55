"""Workload diagnostics and the synthetic cross-modal generator.

Reported distances are unsquared: squared-L2 engine values are passed
through a square root at this boundary, other metrics are reported as is.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from roargraph.core import ContractError, Metric, VectorSet
from roargraph.io import GroundTruth

log = logging.getLogger(__name__)

HIST_BINS = 50


@dataclass
class Histogram:
    counts: np.ndarray
    edges: np.ndarray

    @classmethod
    def of(cls, values: np.ndarray, bins: int = HIST_BINS) -> "Histogram":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            return cls(np.zeros(bins, dtype=np.int64), np.zeros(bins + 1))
        lo, hi = float(values.min()), float(values.max())
        if hi == lo:
            hi = lo + 1.0
        counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
        return cls(counts, edges)


@dataclass
class Profile:
    values: np.ndarray
    histogram: Histogram

    @property
    def median(self) -> float:
        return float(np.median(self.values))

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def summary(self) -> dict:
        return {
            "count": int(self.values.size),
            "median": self.median,
            "mean": self.mean,
            "min": float(self.values.min()),
            "max": float(self.values.max()),
        }


def reported(metric: Metric, d):
    """Engine distance -> human-readable distance."""
    d = np.asarray(d, dtype=np.float64)
    if metric is Metric.L2:
        return np.sqrt(np.maximum(d, 0.0))
    return d


def _pairwise(metric: Metric, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    if metric is Metric.L2:
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
        return np.sqrt(np.maximum(sq, 0.0))
    if metric is Metric.INNER_PRODUCT:
        return -(a @ b.T)
    return 1.0 - a @ b.T


# -- Mahalanobis -------------------------------------------------------------


@dataclass
class MahalanobisModel:
    mean: np.ndarray
    chol: np.ndarray

    @classmethod
    def fit(cls, sample: np.ndarray) -> "MahalanobisModel":
        sample = np.asarray(sample, dtype=np.float64)
        n, d = sample.shape
        if n < d + 1:
            raise ContractError(f"covariance needs at least dim+1={d + 1} rows, got {n}")
        mean = sample.mean(axis=0)
        cov = np.cov(sample, rowvar=False).reshape(d, d)
        cov += np.eye(d) * (1e-6 * np.trace(cov) / d)
        try:
            chol = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError:
            raise ContractError("covariance is singular even after regularization") from None
        return cls(mean, chol)

    def distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = linalg.solve_triangular(self.chol, (x - self.mean).T, lower=True)
        return np.sqrt((z * z).sum(axis=0))


def mahalanobis_profile(base: VectorSet, queries: VectorSet, sample_size: int | None = None,
                        seed: int = 0) -> Profile:
    """Mahalanobis distance of every query to a (sampled) base distribution."""
    data = base.data
    if sample_size is not None and sample_size < base.count:
        rng = np.random.default_rng(seed)
        data = data[np.sort(rng.choice(base.count, size=sample_size, replace=False))]
    model = MahalanobisModel.fit(data)
    values = model.distance(queries.data)
    return Profile(values, Histogram.of(values))


# -- 2-Wasserstein via Sinkhorn -------------------------------------------


@dataclass
class SinkhornResult:
    distance: float
    iterations: int
    marginal_error: float
    converged: bool
    epsilon: float


def wasserstein2_sinkhorn(
    a,
    b,
    epsilon: float | None = None,
    max_iters: int = 1000,
    tol: float = 1e-6,
    relative_epsilon: float = 0.1,
) -> SinkhornResult:
    """Entropic 2-Wasserstein distance between two uniform point clouds.

    Runs log-domain Sinkhorn on the squared-Euclidean cost with epsilon
    annealing and returns ``sqrt(<plan, cost>)``. ``epsilon`` defaults to
    ``relative_epsilon * median(cost)``. Convergence is the L1 violation of
    the row marginal after a column update.
    """
    a = np.asarray(a.data if isinstance(a, VectorSet) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, VectorSet) else b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractError("samples must be 2-D with equal dimension")
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ContractError("samples must be non-empty")
    cost = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    np.maximum(cost, 0.0, out=cost)
    if epsilon is None:
        med = float(np.median(cost))
        epsilon = relative_epsilon * (med if med > 0 else 1.0)
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    n, m = cost.shape
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    # anneal from the cost scale down to the target epsilon, warm-starting duals
    eps = max(epsilon, float(cost.max()) if cost.max() > 0 else epsilon)
    it = 0
    err = np.inf
    while True:
        final = eps <= epsilon
        budget = max_iters - it if final else max(1, min(50, max_iters - it))
        for _ in range(budget):
            f = eps * log_a - eps * logsumexp((g[None, :] - cost) / eps, axis=1)
            g = eps * log_b - eps * logsumexp((f[:, None] - cost) / eps, axis=0)
            it += 1
            if final:
                row = np.exp(logsumexp((f[:, None] + g[None, :] - cost) / eps, axis=1))
                err = float(np.abs(row - np.exp(log_a)).sum())
                if err < tol:
                    break
        if final or it >= max_iters:
            break
        eps = max(epsilon, eps * 0.5)
    plan = np.exp((f[:, None] + g[None, :] - cost) / eps)
    total = float((plan * cost).sum())
    converged = err < tol
    if not converged:
        log.warning("sinkhorn did not converge: marginal error %.3g after %d iterations", err, it)
    return SinkhornResult(float(np.sqrt(max(total, 0.0))), it, err, converged, float(epsilon))


# -- nearest-neighbor geometry ---------------------------------------------


def nn_distance_profile(gt: GroundTruth, metric: Metric = Metric.L2) -> Profile:
    """Distance from each query to its nearest neighbor."""
    if gt.k < 1:
        raise ContractError("ground truth needs k >= 1")
    values = reported(metric, gt.dists[:, 0])
    return Profile(values, Histogram.of(values))


def nn_dispersion_profile(base: VectorSet, gt: GroundTruth, k: int | None = None) -> np.ndarray:
    """Mean separation of each ranked neighbor from the other neighbors.

    For every query and rank i, averages the distance from its i-th
    nearest neighbor to the remaining ``k - 1``; the result is the
    per-rank average over queries (length ``k``).
    """
    k = gt.k if k is None else k
    if k < 2:
        raise ContractError("dispersion needs k >= 2")
    if k > gt.k:
        raise ContractError(f"ground truth depth {gt.k} < k={k}")
    total = np.zeros(k)
    for row in gt.ids[:, :k]:
        vecs = base.data[row]
        d = _pairwise(base.metric, vecs, vecs)
        np.fill_diagonal(d, 0.0)
        total += d.sum(axis=1) / (k - 1)
    return total / max(gt.query_count, 1)


# -- synthetic cross-modal workload ---------------------------------------


@dataclass
class SyntheticWorkload:
    base: VectorSet
    ood_queries: VectorSet
    id_queries: VectorSet


def _directions(rng, n, dim, center, basis, weights, spread) -> np.ndarray:
    g = rng.standard_normal((n, dim))
    if spread is not None:
        g = center[None, :] + spread * (g * weights[None, :]) @ basis.T
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def gen_synthetic(
    n_base: int,
    n_query_ood: int,
    n_query_id: int,
    dim: int,
    seed: int = 0,
    shell_noise: float = 0.05,
    ood_depth: float = 0.3,
    spread: float | None = None,
    decay: float = 0.0,
) -> SyntheticWorkload:
    """Points scattered around a sphere, with OOD queries sunk inside it.

    Base vectors and ID queries are unit directions with radius
    ``1 + shell_noise * z``. OOD queries share that law but their radius is
    multiplied by ``1 - ood_depth``.

    ``spread=None`` draws directions uniformly on the sphere. A finite
    ``spread`` concentrates them in a cone around a random axis, with
    angular scale about ``spread`` radians; ``decay > 0`` gives the
    tangential spread a power-law spectrum (component j scaled by
    ``(j+1)**-decay`` in a random basis), lowering the intrinsic dimension.
    Both mimic the narrow, near-low-rank cone real embedding models fill.
    """
    if dim < 3:
        raise ContractError("dim must be >= 3")
    if min(n_base, n_query_ood, n_query_id) < 0:
        raise ContractError("counts must be non-negative")
    if shell_noise < 0 or not 0 <= ood_depth < 1:
        raise ContractError("need shell_noise >= 0 and 0 <= ood_depth < 1")
    if spread is not None and spread <= 0:
        raise ContractError("spread must be positive")
    if decay < 0:
        raise ContractError("decay must be >= 0")
    rng = np.random.default_rng(seed)
    center = rng.standard_normal(dim)
    center /= np.linalg.norm(center)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    weights = (np.arange(dim) + 1.0) ** (-decay)
    weights /= np.linalg.norm(weights)

    def shell(n, depth):
        u = _directions(rng, n, dim, center, basis, weights, spread)
        r = (1.0 + shell_noise * rng.standard_normal(n)) * (1.0 - depth)
        return (u * r[:, None]).astype(np.float32)

    base = shell(n_base, 0.0)
    ood = shell(n_query_ood, ood_depth)
    idq = shell(n_query_id, 0.0)
    return SyntheticWorkload(VectorSet(base), VectorSet(ood), VectorSet(idq))


# desk-scale OOD workload used by the benchmark harness and acceptance suite
DESK_WORKLOAD = dict(dim=32, shell_noise=0.015, ood_depth=0.3, spread=0.2, decay=1.0)
