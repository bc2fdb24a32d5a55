import logging

import numpy as np
import pytest

from roargraph.construction import build_roargraph
from roargraph.core import ContractError, VectorSet
from roargraph.oracle import exact_knn
from roargraph.search import batch_search, beam_search
from roargraph.update import delete, insert, insert_many


@pytest.fixture
def built(small_workload):
    base, cq, eq, _ = small_workload
    store = VectorSet(base.data.copy())
    index, bip = build_roargraph(store, cq, nq=20, m=10, l=50)
    return index, bip, store, eq


def test_insert_duplicate_of_pivot(built):
    index, bip, base, _ = built
    pivot = int(bip.anchors[0])
    v = base.data[pivot].copy()
    rep = insert(index, bip, base, v)
    assert not rep.fallback and rep.pivot == pivot
    candidates = set(bip.query_out(rep.query).tolist())
    assert int(rep.neighbors[0]) in candidates
    assert rep.node in bip.query_out(rep.query).tolist()
    hit = beam_search(index, base, v, 20, 1)
    assert hit.ids[0] in (pivot, rep.node) and hit.dists[0] == 0


def test_insert_into_single_node_index(caplog):
    base = VectorSet([[0.0, 0.0]])
    index, bip = build_roargraph(base, VectorSet([[1.0, 0.0], [0.0, 1.0]]), nq=3, m=4, l=8)
    with caplog.at_level(logging.WARNING):
        rep = insert(index, bip, base, [2.0, 2.0])
    assert rep.fallback and rep.node == 1
    assert index.neighbors(1).tolist() == [0]
    assert 1 in index.neighbors(0).tolist()


def test_invariants_after_many_inserts(built, rng):
    index, bip, base, _ = built
    edges_before = {i: set(index.neighbors(i).tolist()) for i in range(index.n)}
    reps = insert_many(index, bip, base, base.data[:200] + 0.01 * rng.standard_normal((200, base.dim)))
    index.validate(2 * index.params.m)
    assert index.n == base.count == 2200
    touched = {int(p) for r in reps for p in r.neighbors}
    for i, old in edges_before.items():
        now = set(index.neighbors(i).tolist())
        if i not in touched:
            assert now == old
        assert now - old <= set(range(2000, 2200))


def test_insert_requires_bipartite(built):
    index, _, base, _ = built
    with pytest.raises(ContractError):
        insert(index, None, base, base.data[0])


def test_delete_then_search_exact_vector(built):
    index, _, base, _ = built
    target = 123
    assert delete(index, target).deleted
    rep = beam_search(index, base, base.data[target], 40, 5)
    assert target not in rep.ids.tolist()
    live = np.flatnonzero(~index.deleted)
    want = exact_knn(base.subset(live), base.subset([target]), 1).ids[0, 0]
    assert rep.ids[0] == live[want]


def test_delete_is_idempotent(built):
    index, _, _, _ = built
    assert delete(index, 5).deleted
    again = delete(index, 5)
    assert not again.deleted and "already" in again.warning
    assert index.tombstones.tolist() == [5]


def test_delete_all_but_one(rng):
    base = VectorSet(rng.standard_normal((40, 4)))
    index, _ = build_roargraph(base, VectorSet(rng.standard_normal((40, 4))), nq=8, m=6, l=20)
    for i in range(40):
        if i != 17:
            delete(index, i)
    assert beam_search(index, base, rng.standard_normal(4), 40, 3).ids.tolist() == [17]


def test_small_deletion_barely_moves_recall(built):
    index, _, base, eq = built
    gt = exact_knn(base, eq, 10)
    before = batch_search(index, base, eq, 40, 10, gt=gt).recall
    for i in np.random.default_rng(0).choice(base.count, 20, replace=False):
        delete(index, int(i))
    live = np.flatnonzero(~index.deleted)
    live_gt = exact_knn(base.subset(live), eq, 10)
    live_gt.ids[:] = live[live_gt.ids]
    after = batch_search(index, base, eq, 40, 10, gt=live_gt).recall
    assert abs(after - before) <= 0.02


def test_insert_never_shrinks_existing_lists(built):
    index, bip, base, eq = built
    before = index.degrees.copy()
    insert_many(index, bip, base, eq.data[:50])
    after = index.degrees[: before.shape[0]]
    assert (after >= before).all()
    assert after.max() <= 2 * index.params.m
