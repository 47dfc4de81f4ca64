import numpy as np
import pytest

from crowdfluid import graph_from_edges

_ACCEPTANCE_LINES = []


def random_connected_graph(rng, num_squares, extra_edge_prob=0.3):
    """Random spanning tree plus independent extra edges."""
    order = rng.permutation(num_squares)
    edges = set()
    for k in range(1, num_squares):
        parent = order[rng.integers(0, k)]
        edges.add(tuple(sorted((int(order[k]), int(parent)))))
    for i in range(num_squares):
        for j in range(i + 1, num_squares):
            if rng.random() < extra_edge_prob:
                edges.add((i, j))
    return graph_from_edges(sorted(edges), num_squares)


@pytest.fixture
def acceptance_report():
    def record(name, passed, detail=""):
        _ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
