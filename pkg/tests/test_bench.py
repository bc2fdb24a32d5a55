import io

import numpy as np
import pytest

from roargraph import bench
from roargraph.bench import SWEEP_COLUMNS, SWEEP_SCHEMA, SweepRow, at_recall
from roargraph.construction import build_roargraph
from roargraph.core import ContractError, VectorSet
from roargraph.oracle import exact_knn


def row(L, recall, qps, label="g"):
    return SweepRow(SWEEP_SCHEMA, label, L, 10, recall, qps, L / 10, L * 2.0)


SWEEP = [row(10, 0.6, 1000.0), row(20, 0.8, 800.0), row(50, 0.95, 500.0)]


def test_interpolates_between_bracketing_rows():
    # 0.9 sits 2/3 of the way from 0.8 to 0.95
    assert at_recall(SWEEP, 0.9, "qps") == pytest.approx(600.0)
    assert at_recall(SWEEP, 0.9, "L") == pytest.approx(40.0)


def test_exact_hit_and_first_row():
    assert at_recall(SWEEP, 0.8, "qps") == pytest.approx(800.0)
    assert at_recall(SWEEP, 0.5, "qps") == 1000.0


def test_unattained_target():
    assert at_recall(SWEEP, 0.99, "qps") is None


def test_row_order_does_not_matter():
    assert at_recall(SWEEP[::-1], 0.9, "qps") == at_recall(SWEEP, 0.9, "qps")


def test_sweep_csv_round_trip(tmp_path):
    buf = io.StringIO()
    bench.write_sweep(SWEEP, buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == ",".join(SWEEP_COLUMNS)
    assert text.splitlines()[0] == "schema,label,L,k,recall,qps,mean_hops,mean_visited"
    path = tmp_path / "s.csv"
    path.write_text(text)
    assert bench.read_sweep(path) == SWEEP


def test_read_sweep_rejects_foreign_files(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ContractError):
        bench.read_sweep(path)
    buf = io.StringIO()
    bench.write_sweep([SweepRow("other/9", "g", 10, 10, 0.5, 1.0, 1.0, 1.0)], buf)
    path.write_text(buf.getvalue())
    with pytest.raises(ContractError, match="schema"):
        bench.read_sweep(path)


def test_report_and_table():
    rows = bench.report({"a": SWEEP, "b": [row(10, 0.5, 900.0, "b")]}, (0.9,))
    by = {r.label: r for r in rows}
    assert by["a"].qps == pytest.approx(600.0)
    assert by["b"].qps is None and by["b"].max_recall == 0.5
    table = bench.format_report(rows)
    assert table.splitlines()[0].split() == ["label", "recall", "QPS", "hops", "visited", "L"]
    assert "-" in table.splitlines()[2]


def test_load_sweeps_groups_by_label(tmp_path):
    for name, rows in (("one", SWEEP[:2]), ("two", SWEEP[2:])):
        with open(tmp_path / f"{name}.csv", "w", newline="") as fh:
            bench.write_sweep(rows, fh)
    grouped = bench.load_sweeps([tmp_path / "one.csv", tmp_path / "two.csv"])
    assert list(grouped) == ["g"] and len(grouped["g"]) == 3


def test_select_fraction():
    qs = VectorSet(np.arange(40, dtype=np.float32).reshape(20, 2))
    sub = bench.select_fraction(qs, 0.25, seed=3)
    assert sub.count == 5
    firsts = sub.data[:, 0]
    assert (np.diff(firsts) > 0).all()
    assert np.array_equal(sub.data, bench.select_fraction(qs, 0.25, seed=3).data)
    assert bench.select_fraction(qs, 1.0) is qs
    for bad in (0.0, 1.5, -0.1):
        with pytest.raises(ContractError):
            bench.select_fraction(qs, bad)


def test_sweep_rows_per_L(small_workload):
    base, cq, eq, _ = small_workload
    index, bip = build_roargraph(base, cq, nq=20, m=10, l=50)
    gt = exact_knn(base, eq, 10)
    rows = bench.sweep(bench.stage_graph("enhanced", base, index), eq, gt, 10, (10, 20, 50), repeats=2)
    assert [r.L for r in rows] == [10, 20, 50]
    assert all(r.qps > 0 and r.schema == SWEEP_SCHEMA for r in rows)
    assert rows[-1].recall >= rows[0].recall
    bip_rows = bench.sweep(bench.stage_graph("bipartite", base, bipartite=bip), eq, gt, 10, (50,), repeats=1)
    assert bip_rows[0].recall > 0.3


def test_stage_graph_contract():
    base = VectorSet(np.zeros((3, 2), dtype=np.float32))
    with pytest.raises(ContractError):
        bench.stage_graph("enhanced", base)
    with pytest.raises(ContractError, match="unknown"):
        bench.stage_graph("bogus", base)
    with pytest.raises(ContractError):
        bench.sweep(None, base, None, 1, (1,), repeats=0)
