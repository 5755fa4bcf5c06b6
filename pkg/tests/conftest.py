import numpy as np
import pytest

from ctxembed import graph as gr


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path_graph():
    """0 - 1 - 2 chain."""
    return gr.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def two_triangles():
    """Two triangles joined by one bridge edge: {0,1,2} - {3,4,5}."""
    edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]
    return gr.from_edges(6, edges)


@pytest.fixture
def barbell():
    """Two 4-cliques joined by a bridge between nodes 3 and 4."""
    edges = []
    for base in (0, 4):
        members = range(base, base + 4)
        edges.extend(
            (u, v) for i, u in enumerate(members) for v in list(members)[i + 1:]
        )
    edges.append((3, 4))
    return gr.from_edges(8, edges)


def planted_partition(n, blocks, p_in, p_out, seed):
    """Assortative random graph with known communities."""
    rng = np.random.default_rng(seed)
    per = -(-n // blocks)
    comm = np.arange(n) // per
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            p = p_in if comm[u] == comm[v] else p_out
            if rng.random() < p:
                edges.append((u, v))
    return gr.from_edges(n, np.array(edges)), comm


@pytest.fixture
def planted_100():
    g, comm = planted_partition(100, 4, 0.35, 0.01, seed=42)
    return g, comm
