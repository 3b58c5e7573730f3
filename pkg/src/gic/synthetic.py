"""Seeded random-graph generators for tests, benchmarks and the cut-check run."""

from __future__ import annotations

import numpy as np

from .graphs import AttributeGraph


def random_adjacency(m: int, p: float, rng, weighted: bool = False) -> np.ndarray:
    """Erdos-Renyi-style symmetric adjacency with zero diagonal."""
    upper = np.triu(rng.random((m, m)) < p, 1).astype(float)
    if weighted:
        upper *= np.triu(rng.uniform(0.5, 2.0, size=(m, m)), 1)
    return upper + upper.T


def random_connected_adjacency(m: int, p: float, rng, weighted: bool = False) -> np.ndarray:
    """Random spanning tree plus extra edges; always connected."""
    A = random_adjacency(m, p, rng, weighted)
    order = rng.permutation(m)
    for idx in range(1, m):
        child = order[idx]
        parent = order[rng.integers(0, idx)]
        if A[child, parent] == 0:
            w = rng.uniform(0.5, 2.0) if weighted else 1.0
            A[child, parent] = A[parent, child] = w
    return A


def random_graph(
    m: int, d: int, rng, p: float = 0.4, weighted: bool = False,
    connected: bool = True, label: int | None = None,
) -> AttributeGraph:
    make = random_connected_adjacency if connected else random_adjacency
    A = make(m, p, rng, weighted)
    X = rng.normal(size=(m, d))
    return AttributeGraph(A, X, label=label)


def two_triangles() -> AttributeGraph:
    """Two disconnected unit-weight triangles on vertices {0,1,2} and {3,4,5}."""
    A = np.zeros((6, 6))
    for i, j in [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]:
        A[i, j] = A[j, i] = 1.0
    return AttributeGraph(A, np.zeros((6, 1)))


def degree_separable_dataset(n_graphs: int, rng, m_range=(8, 14)):
    """Two classes split by edge density; attributes are the degree scalar.

    Class 0 graphs are sparse (trees plus a little), class 1 dense. Degree
    statistics alone separate them, so a small network should fit quickly.
    """
    graphs = []
    for i in range(n_graphs):
        label = i % 2
        m = int(rng.integers(m_range[0], m_range[1] + 1))
        p = 0.08 if label == 0 else 0.55
        g = random_graph(m, 0, rng, p=p, label=label)
        graphs.append(g.with_attributes(g.degrees[:, None]))
    return graphs
