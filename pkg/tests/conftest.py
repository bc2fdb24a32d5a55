import numpy as np
import pytest

from roargraph.analysis import DESK_WORKLOAD, gen_synthetic
from roargraph.core import VectorSet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_workload():
    """2k base / 2k construction / 200 eval OOD queries, desk law in 16-d."""
    params = {**DESK_WORKLOAD, "dim": 16}
    w = gen_synthetic(2000, 2200, 200, seed=7, **params)
    ood = w.ood_queries
    return w.base, ood.subset(slice(0, 2000)), ood.subset(slice(2000, 2200)), w.id_queries


def gaussian(n, d, seed=0, metric="l2"):
    return VectorSet(np.random.default_rng(seed).standard_normal((n, d)).astype(np.float32), metric)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line; it is echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, name, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        return line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
