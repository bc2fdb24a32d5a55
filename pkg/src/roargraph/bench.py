"""Search sweeps, recall-matched comparisons and report tables."""

from __future__ import annotations

import csv
import statistics
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from roargraph.construction import STAGES, search_entry
from roargraph.core import ContractError, VectorSet
from roargraph.index import BipartiteGraph, RoarIndex
from roargraph.io import GroundTruth
from roargraph.search import SearchGraph, batch_search_graph

SWEEP_SCHEMA = "roargraph-sweep/1"
REPORT_SCHEMA = "roargraph-report/1"
DEFAULT_SWEEP = (10, 20, 50, 100, 200)
QPS_REPEATS = 3


@dataclass(frozen=True)
class SweepRow:
    schema: str
    label: str
    L: int
    k: int
    recall: float
    qps: float
    mean_hops: float
    mean_visited: float


SWEEP_COLUMNS = tuple(f.name for f in fields(SweepRow))


def stage_graph(
    stage: str,
    base: VectorSet,
    index: RoarIndex | None = None,
    bipartite: BipartiteGraph | None = None,
    projected: RoarIndex | None = None,
) -> SearchGraph:
    """Searchable view of one construction stage.

    Stages whose medoid has no out-edges start from the nearest-to-centroid
    node that has some, so every stage can be searched at all.
    """
    if stage == "enhanced":
        if index is None:
            raise ContractError("the enhanced stage needs the final index")
        return SearchGraph.of(index, base)
    if stage == "projected":
        if projected is None:
            raise ContractError("the projected stage needs the projected graph")
        graph = SearchGraph.of(projected, base)
        graph.entry = search_entry(projected, base)
        return graph
    if stage == "bipartite":
        if bipartite is None:
            raise ContractError("the bipartite stage needs the bipartite graph")
        anchors = bipartite.has_in_edge(base.count)
        entry = search_entry(None, base, anchors)
        return SearchGraph.of_bipartite(bipartite, base, entry)
    raise ContractError(f"unknown graph stage {stage!r}; expected one of {', '.join(STAGES)}")


def sweep(
    graph: SearchGraph,
    queries: VectorSet,
    gt: GroundTruth,
    k: int,
    Ls=DEFAULT_SWEEP,
    threads: int = 1,
    repeats: int = QPS_REPEATS,
    label: str = "index",
) -> list[SweepRow]:
    """One row per L: recall@k, median QPS over ``repeats`` runs, mean hops/visited.

    The first repetition warms caches and JIT code paths too; all
    repetitions return identical ids, so recall and counters come from it.
    """
    if repeats < 1:
        raise ContractError("repeats must be >= 1")
    rows = []
    for L in Ls:
        runs = [batch_search_graph(graph, queries, int(L), k, threads, gt) for _ in range(repeats)]
        first = runs[0]
        rows.append(
            SweepRow(
                SWEEP_SCHEMA,
                label,
                int(L),
                k,
                float(first.recall),
                float(statistics.median(r.qps for r in runs)),
                first.mean_hops,
                first.mean_visited,
            )
        )
    return rows


def write_sweep(rows, fh) -> None:
    """Write sweep rows as CSV to an open text stream."""
    w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(asdict(row))


def read_sweep(path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
            raise ContractError(f"{path}: not a sweep CSV (columns {reader.fieldnames})")
        rows = []
        for rec in reader:
            if rec["schema"] != SWEEP_SCHEMA:
                raise ContractError(f"{path}: unsupported schema {rec['schema']!r}")
            rows.append(
                SweepRow(
                    rec["schema"],
                    rec["label"],
                    int(rec["L"]),
                    int(rec["k"]),
                    float(rec["recall"]),
                    float(rec["qps"]),
                    float(rec["mean_hops"]),
                    float(rec["mean_visited"]),
                )
            )
    return rows


def at_recall(rows, target: float, column: str) -> float | None:
    """Linearly interpolate ``column`` at ``target`` recall along a sweep.

    Rows are taken in ascending L. Returns None when the sweep never
    reaches the target; a first row already above it is returned as is.
    """
    rows = sorted(rows, key=lambda r: r.L)
    prev = None
    for row in rows:
        if row.recall >= target:
            value = getattr(row, column)
            if prev is None or row.recall == prev.recall:
                return float(value)
            w = (target - prev.recall) / (row.recall - prev.recall)
            before = getattr(prev, column)
            return float(before + w * (value - before))
        prev = row
    return None


@dataclass(frozen=True)
class ReportRow:
    schema: str
    label: str
    target_recall: float
    qps: float | None
    mean_hops: float | None
    mean_visited: float | None
    L: float | None
    max_recall: float


REPORT_COLUMNS = tuple(f.name for f in fields(ReportRow))


def report(sweeps: dict[str, list[SweepRow]], targets=(0.9,)) -> list[ReportRow]:
    """Compare labelled sweeps at each target recall."""
    out = []
    for target in targets:
        for label, rows in sweeps.items():
            out.append(
                ReportRow(
                    REPORT_SCHEMA,
                    label,
                    float(target),
                    at_recall(rows, target, "qps"),
                    at_recall(rows, target, "mean_hops"),
                    at_recall(rows, target, "mean_visited"),
                    at_recall(rows, target, "L"),
                    max(r.recall for r in rows),
                )
            )
    return out


def load_sweeps(paths) -> dict[str, list[SweepRow]]:
    """Group rows from several sweep CSVs by label (file stem if blank)."""
    grouped: dict[str, list[SweepRow]] = {}
    for path in paths:
        for row in read_sweep(path):
            grouped.setdefault(row.label or Path(path).stem, []).append(row)
    return grouped


def write_report(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in asdict(row).items()})


def format_report(rows) -> str:
    """Plain-text table for terminals."""
    head = ("label", "recall", "QPS", "hops", "visited", "L")
    lines = [head]
    for r in rows:
        lines.append((
            r.label,
            f"{r.target_recall:.3f}",
            *("-" if v is None else f"{v:.1f}" for v in (r.qps, r.mean_hops, r.mean_visited, r.L)),
        ))
    widths = [max(len(line[i]) for line in lines) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in lines)


def select_fraction(queries: VectorSet, fraction: float, seed: int = 0) -> VectorSet:
    """Seeded subset of ``round(fraction * count)`` queries, in original order."""
    if not 0 < fraction <= 1:
        raise ContractError("query fraction must be in (0, 1]")
    if fraction == 1:
        return queries
    n = max(1, int(round(fraction * queries.count)))
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(queries.count, size=n, replace=False))
    return queries.subset(keep)
