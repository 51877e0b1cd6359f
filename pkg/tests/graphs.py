"""Graph generators and brute-force helpers shared by the tests."""

from __future__ import annotations

import itertools

import numpy as np

from pnormflow import NetworkGraph

TRIANGLE = NetworkGraph(3, [(1, 2), (1, 3), (2, 3)])
DIAMOND = NetworkGraph(4, [(1, 2), (1, 3), (2, 4), (3, 4)])
PATH3 = NetworkGraph(3, [(1, 2), (2, 3)])
SINGLE = NetworkGraph(2, [(1, 2)])


def random_graph(rng: np.random.Generator, n: int, m: int) -> NetworkGraph:
    """Connected graph on ``n`` nodes with ``m`` edges and shuffled labels."""
    m = min(max(m, n - 1), n * (n - 1) // 2)
    label = rng.permutation(n) + 1
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.add(tuple(sorted((int(label[u]), int(label[v])))))
    while len(edges) < m:
        a, b = rng.choice(n, size=2, replace=False)
        edges.add(tuple(sorted((int(label[a]), int(label[b])))))
    return NetworkGraph(n, sorted(edges))


def random_traffic(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, n - 1)


def separates(graph: NetworkGraph, sources, removed) -> bool:
    """True if deleting edge positions ``removed`` cuts every source off node N."""
    n = graph.node_count
    seen = {n}
    stack = [n]
    while stack:
        v = stack.pop()
        for k, m in graph.neighbors(v):
            if m not in removed and k not in seen:
                seen.add(k)
                stack.append(k)
    return not (set(sources) & seen)


def brute_force_min_cuts(graph: NetworkGraph, sources) -> list[frozenset[int]]:
    """All minimum-cardinality separating edge sets, by subset enumeration."""
    for k in range(1, graph.edge_count + 1):
        found = [
            frozenset(c)
            for c in itertools.combinations(range(graph.edge_count), k)
            if separates(graph, sources, set(c))
        ]
        if found:
            return found
    raise AssertionError("no separating edge set")


def sources_of(traffic) -> list[int]:
    return [int(i) + 1 for i in np.flatnonzero(np.asarray(traffic) > 0)]
