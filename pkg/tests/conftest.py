import sys

import numpy as np
import pytest

from blissgnn.graph import EdgeCoefficients, edge_coefficients, from_edges


def star(weights, extra_targets=0):
    """Target 0 (and optionally targets 1..extra_targets) aggregating from leaf nodes.

    ``weights`` is a list of per-target coefficient rows over the leaves; leaves
    only carry self-loops.  Returns ``(alpha, targets, leaves)``.
    """
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    t, m = weights.shape
    leaves = np.arange(t, t + m)
    src, dst = [], []
    for i in range(t):
        for c, j in enumerate(leaves):
            if weights[i, c] != 0:
                src.append(j)
                dst.append(i)
    src += leaves.tolist()
    dst += leaves.tolist()
    g = from_edges(t + m, src, dst, self_loops=False)
    vals = np.ones(g.num_edges)
    for i in range(t):
        for c, j in enumerate(leaves):
            if weights[i, c] != 0:
                vals[g.slot(i, int(j))] = weights[i, c]
    return EdgeCoefficients(g, "CUSTOM", vals), np.arange(t), leaves


def random_graph(rng, n, p=0.35, undirected=True):
    mask = rng.random((n, n)) < p
    src, dst = np.nonzero(mask)
    return from_edges(n, src, dst, undirected=undirected)


@pytest.fixture
def six_node():
    """Fixed 6-node undirected graph with SAGE coefficients and 3-d embeddings."""
    g = from_edges(6, [0, 0, 1, 2, 3, 4, 1], [1, 2, 3, 3, 4, 5, 5], undirected=True)
    h = np.random.default_rng(7).standard_normal((6, 3))
    return g, edge_coefficients(g, "SAGE"), h


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
