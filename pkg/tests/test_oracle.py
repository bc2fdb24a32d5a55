import numpy as np
import pytest

from roargraph.core import ContractError, VectorSet, dist
from roargraph.oracle import exact_knn, mean_recall, recall_at_k, self_knn


def test_hand_example():
    base = VectorSet([[0, 0], [1, 0], [5, 5]])
    gt = exact_knn(base, VectorSet([[0.9, 0]]), 2)
    assert gt.ids.tolist() == [[1, 0]]
    assert gt.dists[0] == pytest.approx([0.01, 0.81], rel=1e-5)


def test_k_equals_count_sorts_everything(rng):
    base = VectorSet(rng.standard_normal((30, 4)))
    gt = exact_knn(base, VectorSet(rng.standard_normal((3, 4))), 30)
    assert all(sorted(row) == list(range(30)) for row in gt.ids.tolist())
    assert (np.diff(gt.dists, axis=1) >= 0).all()


def test_query_equal_to_base_vector(rng):
    base = VectorSet(rng.standard_normal((50, 8)))
    gt = exact_knn(base, base.subset([17]), 3)
    assert gt.ids[0, 0] == 17 and gt.dists[0, 0] == 0


@pytest.mark.parametrize("metric", ["l2", "ip", "cosine"])
def test_matches_double_loop(rng, metric):
    base = VectorSet(rng.standard_normal((200, 16)), metric)
    queries = VectorSet(rng.standard_normal((20, 16)), metric)
    gt = exact_knn(base, queries, 10)
    for qi, q in enumerate(queries.data):
        d = [(dist(metric, q, x), i) for i, x in enumerate(base.data)]
        want = [i for _, i in sorted(d)[:10]]
        assert gt.ids[qi].tolist() == want


def test_ties_break_by_smaller_id():
    base = VectorSet([[1, 0], [0, 1], [-1, 0], [0, -1]])
    gt = exact_knn(base, VectorSet([[0, 0]]), 4)
    assert gt.ids.tolist() == [[0, 1, 2, 3]]


def test_chunking_does_not_change_results(rng):
    base = VectorSet(rng.standard_normal((300, 8)))
    queries = VectorSet(rng.standard_normal((600, 8)))
    full = exact_knn(base, queries, 5)
    part = exact_knn(base, queries.subset(slice(300, 600)), 5)
    assert np.array_equal(full.ids[300:], part.ids)
    assert exact_knn(base, queries, 5, threads=3) == full


def test_k_out_of_range(rng):
    base = VectorSet(rng.standard_normal((5, 2)))
    with pytest.raises(ContractError):
        exact_knn(base, base, 6)
    with pytest.raises(ContractError):
        exact_knn(base, base, 0)


def test_metric_mismatch(rng):
    with pytest.raises(ContractError):
        exact_knn(VectorSet(np.ones((3, 2))), VectorSet(np.ones((1, 2)), "ip"), 1)


def test_self_knn_excludes_self(rng):
    base = VectorSet(rng.standard_normal((40, 4)))
    gt = self_knn(base, 5)
    assert not (gt.ids == np.arange(40)[:, None]).any()


def test_recall_examples():
    truth = list(range(10))
    assert recall_at_k(truth, truth, 10) == 1.0
    assert recall_at_k(list(range(10, 20)), truth, 10) == 0.0
    assert recall_at_k([0, 1, 2, 3, 4, 50, 51, 52, 53, 54], truth, 10) == 0.5
    with pytest.raises(ContractError):
        recall_at_k(truth, truth, 0)


def test_mean_recall(rng):
    base = VectorSet(rng.standard_normal((50, 4)))
    gt = exact_knn(base, base.subset(slice(0, 5)), 3)
    assert mean_recall(list(gt.ids), gt, 3) == 1.0
