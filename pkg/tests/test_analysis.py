import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roargraph.analysis import (
    DESK_WORKLOAD,
    Histogram,
    MahalanobisModel,
    gen_synthetic,
    mahalanobis_profile,
    nn_dispersion_profile,
    nn_distance_profile,
    wasserstein2_sinkhorn,
)
from roargraph.core import ContractError, Metric, VectorSet
from roargraph.io import GroundTruth
from roargraph.oracle import exact_knn


def fixed_model(mean, cov):
    return MahalanobisModel(np.asarray(mean, float), np.linalg.cholesky(np.asarray(cov, float)))


def test_mahalanobis_worked_examples():
    m = fixed_model([1.0, -2.0], np.eye(2))
    assert m.distance([1.0, -2.0])[0] == 0
    assert m.distance([2.0, -2.0])[0] == pytest.approx(1.0)
    scaled = fixed_model([0.0, 0.0], np.diag([4.0, 1.0]))
    assert scaled.distance([2.0, 0.0])[0] == pytest.approx(1.0)


def test_mahalanobis_fit_needs_enough_rows():
    with pytest.raises(ContractError):
        MahalanobisModel.fit(np.zeros((3, 4)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_mahalanobis_affine_invariance(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((200, 3))
    q = rng.standard_normal((5, 3))
    # well-conditioned map: the covariance ridge makes invariance approximate otherwise
    rot, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    a = rot * rng.uniform(0.5, 2.0, 3)
    t = rng.standard_normal(3)
    d0 = MahalanobisModel.fit(x).distance(q)
    d1 = MahalanobisModel.fit(x @ a.T + t).distance(q @ a.T + t)
    np.testing.assert_allclose(d0, d1, rtol=1e-5, atol=1e-6)


def test_mahalanobis_profile_sampled_is_seeded():
    w = gen_synthetic(500, 50, 10, 8, seed=1)
    p1 = mahalanobis_profile(w.base, w.ood_queries, sample_size=200, seed=4)
    p2 = mahalanobis_profile(w.base, w.ood_queries, sample_size=200, seed=4)
    assert np.array_equal(p1.values, p2.values)
    assert p1.histogram.counts.sum() == 50


def test_sinkhorn_identical_clouds_near_zero_at_small_epsilon():
    a = np.random.default_rng(0).standard_normal((60, 3))
    res = wasserstein2_sinkhorn(a, a, epsilon=1e-3)
    assert res.converged and res.distance < 0.1


def test_sinkhorn_single_points():
    res = wasserstein2_sinkhorn([[0.0, 0.0]], [[3.0, 4.0]])
    assert res.distance == pytest.approx(5.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 40), st.integers(5, 40))
def test_sinkhorn_symmetric_and_non_negative(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((n, 3)), rng.standard_normal((m, 3)) + 1
    ab, ba = wasserstein2_sinkhorn(a, b, epsilon=0.5), wasserstein2_sinkhorn(b, a, epsilon=0.5)
    assert ab.distance >= 0
    assert ab.distance == pytest.approx(ba.distance, rel=1e-4)


def test_sinkhorn_shift_small_scale():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((300, 4))
    shift = np.array([6.0, 0.0, 0.0, 0.0])
    res = wasserstein2_sinkhorn(a, a + shift, epsilon=0.05)
    assert res.distance == pytest.approx(6.0, rel=0.02)


def test_sinkhorn_contract():
    with pytest.raises(ContractError):
        wasserstein2_sinkhorn(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ContractError):
        wasserstein2_sinkhorn(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(ContractError):
        wasserstein2_sinkhorn(np.zeros((2, 2)), np.ones((3, 2)), epsilon=-1)


def test_sinkhorn_reports_non_convergence(caplog):
    rng = np.random.default_rng(0)
    res = wasserstein2_sinkhorn(rng.standard_normal((50, 2)), rng.standard_normal((40, 2)),
                                epsilon=1e-3, max_iters=3)
    assert not res.converged and res.iterations == 3
    assert "did not converge" in caplog.text


def line_gt(rows):
    ids = np.asarray(rows)
    return GroundTruth(ids, np.tile(np.arange(ids.shape[1], dtype=np.float32), (ids.shape[0], 1)))


def test_dispersion_on_a_line():
    base = VectorSet([[0.0], [1.0], [2.0]])
    disp = nn_dispersion_profile(base, line_gt([[0, 1, 2]]))
    np.testing.assert_allclose(disp, [1.5, 1.0, 1.5])


def test_dispersion_of_identical_points_is_zero():
    base = VectorSet(np.ones((4, 3), dtype=np.float32))
    np.testing.assert_allclose(nn_dispersion_profile(base, line_gt([[0, 1, 2, 3]])), 0.0)


def test_dispersion_invariant_to_query_order():
    w = gen_synthetic(300, 20, 1, 8, seed=2)
    gt = exact_knn(w.base, w.ood_queries, 10)
    perm = np.random.default_rng(0).permutation(20)
    shuffled = GroundTruth(gt.ids[perm], gt.dists[perm])
    np.testing.assert_allclose(nn_dispersion_profile(w.base, gt), nn_dispersion_profile(w.base, shuffled))


def test_dispersion_contract():
    base = VectorSet([[0.0], [1.0]])
    with pytest.raises(ContractError):
        nn_dispersion_profile(base, line_gt([[0]]))
    with pytest.raises(ContractError):
        nn_dispersion_profile(base, line_gt([[0, 1]]), k=5)


def test_nn_distance_reported_unsquared():
    base = VectorSet([[0.0, 0.0], [3.0, 4.0]])
    gt = exact_knn(base, VectorSet([[0.0, 0.0], [6.0, 8.0]]), 1)
    prof = nn_distance_profile(gt, Metric.L2)
    np.testing.assert_allclose(prof.values, [0.0, 5.0])
    assert prof.summary()["max"] == pytest.approx(5.0)


def test_histogram_degenerate_values():
    h = Histogram.of(np.full(7, 2.0), bins=5)
    assert h.counts.sum() == 7 and h.edges.shape == (6,)
    assert Histogram.of(np.zeros(0)).counts.sum() == 0


def test_generator_is_deterministic():
    a = gen_synthetic(100, 30, 10, 8, seed=5, **{k: v for k, v in DESK_WORKLOAD.items() if k != "dim"})
    b = gen_synthetic(100, 30, 10, 8, seed=5, **{k: v for k, v in DESK_WORKLOAD.items() if k != "dim"})
    for x, y in ((a.base, b.base), (a.ood_queries, b.ood_queries), (a.id_queries, b.id_queries)):
        assert np.array_equal(x.data, y.data)
    c = gen_synthetic(100, 30, 10, 8, seed=6)
    assert not np.array_equal(a.base.data, c.base.data)


def test_generator_shapes_and_depth():
    w = gen_synthetic(400, 300, 200, 6, seed=0, shell_noise=0.01, ood_depth=0.5)
    assert w.base.data.shape == (400, 6) and w.ood_queries.count == 300 and w.id_queries.count == 200
    np.testing.assert_allclose(np.linalg.norm(w.base.data, axis=1), 1.0, atol=0.06)
    np.testing.assert_allclose(np.linalg.norm(w.ood_queries.data, axis=1), 0.5, atol=0.03)


def test_zero_depth_queries_are_in_distribution():
    params = {**DESK_WORKLOAD, "dim": 16, "ood_depth": 0.0}
    w = gen_synthetic(3000, 1000, 1000, seed=11, **params)
    ood = mahalanobis_profile(w.base, w.ood_queries).median
    idm = mahalanobis_profile(w.base, w.id_queries).median
    assert ood == pytest.approx(idm, rel=0.1)


@pytest.mark.parametrize(
    "kwargs",
    [dict(dim=2), dict(n_base=-1), dict(shell_noise=-0.1), dict(ood_depth=1.0), dict(spread=0.0), dict(decay=-1)],
)
def test_generator_rejects_bad_parameters(kwargs):
    args = dict(n_base=10, n_query_ood=5, n_query_id=5, dim=8)
    args.update(kwargs)
    with pytest.raises(ContractError):
        gen_synthetic(**args)
