"""Network model: canonical edge orientation, incidence matrix, feasibility,
and minimum cut diagnostics.

Nodes are numbered ``1..N`` (node ``N`` is the destination of all traffic).
Edges are stored as ``(r, s)`` pairs with ``r < s`` and a positive load on an
edge means traffic moving from ``r`` to ``s``. Edge *positions* in the Python
API are 0-based indices into :attr:`NetworkGraph.edges`, so they line up with
numpy load vectors; files and CLI output use 1-based edge numbers.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp


class DisconnectedGraphError(ValueError):
    """Raised when a graph does not connect every node to the destination."""

    def __init__(self, node: int, destination: int):
        self.node = node
        super().__init__(
            f"graph is disconnected: node {node} cannot reach node {destination}"
        )


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected connected graph with low-to-high edge orientation.

    Args:
        node_count: Number of nodes ``N`` (at least 2).
        edges: Sequence of ``(r, s)`` pairs, 1-based, with ``r < s``.

    Raises:
        ValueError: On bad indices, self-loops, duplicate or mis-oriented edges.
        DisconnectedGraphError: If some node is unreachable.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    adjacency: tuple[tuple[tuple[int, int], ...], ...] = field(
        init=False, repr=False, compare=False
    )

    def __init__(self, node_count: int, edges: Sequence[Sequence[int]]):
        n = int(node_count)
        if n < 2:
            raise ValueError(f"node_count must be at least 2, got {node_count}")
        canon: list[tuple[int, int]] = []
        seen: set[tuple[int, int]] = set()
        for j, pair in enumerate(edges):
            if len(pair) != 2:
                raise ValueError(f"edge {j + 1}: expected a pair, got {pair!r}")
            r, s = int(pair[0]), int(pair[1])
            if r == s:
                raise ValueError(f"edge {j + 1}: self-loop at node {r}")
            if r > s:
                raise ValueError(f"edge {j + 1}: ({r}, {s}) must be written low-to-high")
            if r < 1 or s > n:
                raise ValueError(f"edge {j + 1}: ({r}, {s}) outside nodes 1..{n}")
            if (r, s) in seen:
                raise ValueError(f"edge {j + 1}: duplicate edge ({r}, {s})")
            seen.add((r, s))
            canon.append((r, s))

        adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for m, (r, s) in enumerate(canon):
            adj[r - 1].append((s, m))
            adj[s - 1].append((r, m))

        object.__setattr__(self, "node_count", n)
        object.__setattr__(self, "edges", tuple(canon))
        object.__setattr__(self, "adjacency", tuple(tuple(a) for a in adj))

        reached = _bfs_order(self, start=n)
        if len(reached) < n:
            missing = sorted(set(range(1, n + 1)) - set(reached))[0]
            raise DisconnectedGraphError(missing, n)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def tails(self) -> np.ndarray:
        """0-based low endpoints ``r - 1`` of every edge."""
        return np.array([r - 1 for r, _ in self.edges], dtype=np.intp)

    @cached_property
    def heads(self) -> np.ndarray:
        """0-based high endpoints ``s - 1`` of every edge."""
        return np.array([s - 1 for _, s in self.edges], dtype=np.intp)

    @cached_property
    def sink_tree(self) -> tuple[tuple[int, ...], dict[int, tuple[int, int]]]:
        """BFS tree rooted at node ``N``.

        Returns the visiting order (1-based nodes, root first) and a map from
        each non-root node to ``(parent, edge_position)``.
        """
        n = self.node_count
        parent: dict[int, tuple[int, int]] = {}
        order = [n]
        seen = {n}
        queue = deque([n])
        while queue:
            v = queue.popleft()
            for k, m in self.adjacency[v - 1]:
                if k not in seen:
                    seen.add(k)
                    parent[k] = (v, m)
                    order.append(k)
                    queue.append(k)
        return tuple(order), parent

    def neighbors(self, node: int) -> tuple[tuple[int, int], ...]:
        """``(neighbor, edge_position)`` pairs of a 1-based node."""
        return self.adjacency[node - 1]

    def cycle_rank(self) -> int:
        return self.edge_count - self.node_count + 1


def _bfs_order(graph: NetworkGraph, start: int) -> list[int]:
    order = [start]
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for k, _ in graph.adjacency[v - 1]:
            if k not in seen:
                seen.add(k)
                order.append(k)
                queue.append(k)
    return order


def validate_traffic(graph: NetworkGraph, traffic: Sequence[float]) -> np.ndarray:
    """Return ``traffic`` as a float array after checking length and sign."""
    t = np.asarray(traffic, dtype=float)
    if t.shape != (graph.node_count - 1,):
        raise ValueError(
            f"traffic must have {graph.node_count - 1} entries, got shape {t.shape}"
        )
    if not np.all(np.isfinite(t)):
        raise ValueError("traffic contains non-finite values")
    bad = np.flatnonzero(t < 0)
    if bad.size:
        raise ValueError(f"traffic at node {bad[0] + 1} is negative ({t[bad[0]]})")
    return t


def build_incidence(graph: NetworkGraph) -> sp.csr_matrix:
    """Node-edge incidence matrix with the destination row dropped.

    Entry ``(i, j)`` is ``+1`` when edge ``j`` joins node ``i+1`` to a higher
    node, ``-1`` when it joins it to a lower node, and 0 otherwise. Shape is
    ``(N-1, M)``.
    """
    n, m = graph.node_count, graph.edge_count
    cols = np.arange(m)
    rows = np.concatenate([graph.tails, graph.heads])
    vals = np.concatenate([np.ones(m), -np.ones(m)])
    full = sp.coo_matrix((vals, (rows, np.concatenate([cols, cols]))), shape=(n, m))
    return full.tocsr()[: n - 1]


class FeasibilityCheck(NamedTuple):
    feasible: bool
    max_residual: float
    residual: np.ndarray


def check_feasibility(
    graph: NetworkGraph,
    loads: Sequence[float],
    traffic: Sequence[float],
    tol: float = 1e-9,
) -> FeasibilityCheck:
    """Compare conservation ``C @ I`` against ``T`` in the max-norm."""
    loads = np.asarray(loads, dtype=float)
    traffic = np.asarray(traffic, dtype=float)
    if loads.shape != (graph.edge_count,):
        raise ValueError(f"loads must have {graph.edge_count} entries, got {loads.shape}")
    if traffic.shape != (graph.node_count - 1,):
        raise ValueError(
            f"traffic must have {graph.node_count - 1} entries, got {traffic.shape}"
        )
    residual = build_incidence(graph) @ loads - traffic
    worst = float(np.max(np.abs(residual))) if residual.size else 0.0
    return FeasibilityCheck(worst <= tol, worst, residual)


def tree_route(graph: NetworkGraph, injections) -> np.ndarray:
    """Loads that carry each node's injection to node ``N`` along the BFS tree.

    ``injections`` has one entry per node ``1..N-1`` and may be signed. The
    result satisfies ``C @ loads == injections`` up to rounding and is zero
    off the tree. Every node only needs its parent link and the totals
    reported by its children, so this is a single converge-cast.
    """
    n = graph.node_count
    order, parent = graph.sink_tree
    subtree = np.zeros(n + 1)
    subtree[1:n] = injections
    loads = np.zeros(graph.edge_count)
    # leaves first: each node pushes its accumulated traffic to its parent
    for v in reversed(order[1:]):
        up, m = parent[v]
        loads[m] = subtree[v] if v < up else -subtree[v]
        subtree[up] += subtree[v]
    return loads


def initial_feasible_flow(graph: NetworkGraph, traffic: Sequence[float]) -> np.ndarray:
    """Route every node's traffic to node ``N`` along a BFS tree rooted at ``N``."""
    return tree_route(graph, validate_traffic(graph, traffic))


@dataclass(frozen=True)
class CutSet:
    """Edge positions (0-based) of a cut separating the sources from node N."""

    edge_indices: frozenset[int]
    source_side: frozenset[int] = frozenset()

    @property
    def cardinality(self) -> int:
        return len(self.edge_indices)


def _unit_max_flow(
    graph: NetworkGraph, sources: Sequence[int]
) -> tuple[int, set[int]]:
    """Edmonds-Karp with unit arcs both ways on every edge.

    Returns the flow value and the set of nodes reachable from the
    super-source in the final residual graph (super-source excluded).
    """
    n = graph.node_count
    sink = n
    # flow[m] in {-1, 0, +1}: net units moved r -> s on edge m
    flow = np.zeros(graph.edge_count, dtype=int)
    source_set = set(sources)
    value = 0

    def residual_bfs() -> tuple[dict[int, tuple[int, int]], set[int]]:
        pred: dict[int, tuple[int, int]] = {v: (0, -1) for v in source_set}
        queue = deque(sorted(source_set))
        while queue:
            v = queue.popleft()
            if v == sink:
                break
            for k, m in graph.adjacency[v - 1]:
                if k in pred:
                    continue
                forward = 1 if v < k else -1
                # unit capacity each way; net flow along v->k may rise to +1
                if forward * flow[m] < 1:
                    pred[k] = (v, m)
                    queue.append(k)
        return pred, set(pred)

    while True:
        pred, reach = residual_bfs()
        if sink not in pred:
            return value, reach
        v = sink
        while v not in source_set:
            u, m = pred[v]
            flow[m] += 1 if u < v else -1
            v = u
        value += 1


def max_unit_flow(graph: NetworkGraph, traffic: Sequence[float]) -> int:
    """Max number of edge-disjoint-capacity units from the sources to node N."""
    sources = _positive_nodes(graph, traffic)
    return _unit_max_flow(graph, sources)[0]


def _positive_nodes(graph: NetworkGraph, traffic: Sequence[float]) -> list[int]:
    t = validate_traffic(graph, traffic)
    sources = [int(i) + 1 for i in np.flatnonzero(t > 0)]
    if not sources:
        raise ValueError("min cut needs at least one node with positive traffic")
    return sources


def min_cut(graph: NetworkGraph, traffic: Sequence[float]) -> CutSet:
    """Minimum-cardinality edge set separating positive-traffic nodes from N.

    Computed from a unit-capacity max flow fed by a super-source with
    unbounded arcs into every positive-traffic node; the cut is read off the
    residual reachability after the last augmentation.
    """
    sources = _positive_nodes(graph, traffic)
    _, reach = _unit_max_flow(graph, sources)
    cut = frozenset(
        m for m, (r, s) in enumerate(graph.edges) if (r in reach) != (s in reach)
    )
    return CutSet(cut, frozenset(reach))


class CutBalance(NamedTuple):
    max_load: float
    min_load: float
    cv: float


def cut_balance_metric(loads: Sequence[float], cut: CutSet) -> CutBalance:
    """Max, min and coefficient of variation of ``|I_e|`` over the cut edges.

    The coefficient of variation is the population standard deviation over
    the mean; it is 0 for a perfectly even split (and for an all-zero cut).
    """
    if not cut.edge_indices:
        raise ValueError("cut is empty")
    loads = np.asarray(loads, dtype=float)
    a = np.abs(loads[sorted(cut.edge_indices)])
    mean = a.mean()
    cv = float(a.std() / mean) if mean > 0 else 0.0
    return CutBalance(float(a.max()), float(a.min()), cv)
