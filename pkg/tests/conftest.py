import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from plexadapt.mesh import build_from_cells, unit_square_mesh  # noqa: E402


def jittered_square(n, amp=0.25, seed=0):
    """Structured n x n mesh with interior vertices displaced by up to ``amp / n``; side tags kept."""
    m = unit_square_mesh(n)
    xy = m.vertex_coords().copy()
    inner = m.vertex_tags() == 0
    rng = np.random.default_rng(seed)
    xy[inner] += rng.uniform(-amp / n, amp / n, size=(int(inner.sum()), 2))
    idx = m.vertex_index()
    tags = {tuple(int(idx[v]) for v in m.edge_vertices(e)): m.tag(e)
            for e in m.edge_ids().tolist() if m.is_boundary_edge(e)}
    return build_from_cells(m.triangles(), xy, tags)


@pytest.fixture
def single_triangle():
    return build_from_cells([(0, 1, 2)], [(0, 0), (1, 0), (0, 1)])


@pytest.fixture
def two_triangle_square():
    return unit_square_mesh(1)


_CRITERIA = pytest.StashKey[dict]()


class CriterionLog:
    """Collects one pass/fail line per acceptance criterion."""

    def __init__(self, store: dict):
        self.store = store

    def check(self, number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        self.store[number] = line
        print(line)
        assert ok, line


@pytest.fixture(scope="session")
def criteria(request):
    return CriterionLog(request.config.stash.setdefault(_CRITERIA, {}))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CRITERIA, None)
    if not store:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(store):
        terminalreporter.write_line(store[k])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.passed or rep.skipped:
        return
    store = item.config.stash.setdefault(_CRITERIA, {})
    k = mark.args[0]
    if k not in store and call.excinfo is not None:
        store[k] = f"criterion {k:2d}: FAIL  {call.excinfo.typename}: {str(call.excinfo.value)[:120]}"
