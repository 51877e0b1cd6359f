"""Reference solvers that share no code path with the Jacobi/SQP solver.

* ``reduced-laplacian``: exact ``p = 2`` optimum from one dense linear solve.
* ``nullspace-descent``: general ``p`` by damped Newton over cycle
  coordinates ``I = I0 + B z``.
* ``grid-search``: exhaustive scan of at most two cycle coordinates.
* ``scalar-stationarity``: closed form for the three-node triangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph_model import NetworkGraph, initial_feasible_flow, validate_traffic
from .objective import _check_p, cost, gradient


@dataclass(frozen=True)
class OracleSolution:
    flows: np.ndarray
    cost: float
    method: str
    converged: bool = True
    gradient_norm: float = 0.0
    iterations: int = 0


def oracle_p2(graph: NetworkGraph, traffic) -> OracleSolution:
    """Minimum of ``sum I_m**2`` under conservation via the grounded Laplacian."""
    t = validate_traffic(graph, traffic)
    n = graph.node_count
    lap = np.zeros((n, n))
    for r, s in graph.edges:
        a, b = r - 1, s - 1
        lap[a, a] += 1.0
        lap[b, b] += 1.0
        lap[a, b] -= 1.0
        lap[b, a] -= 1.0
    u = np.zeros(n)
    u[: n - 1] = np.linalg.solve(lap[: n - 1, : n - 1], t)
    flows = u[graph.tails] - u[graph.heads]
    return OracleSolution(flows, cost(flows, 2.0), "reduced-laplacian")


def cycle_basis(graph: NetworkGraph) -> np.ndarray:
    """Fundamental cycles of a BFS spanning tree as an ``M x (M-N+1)`` matrix.

    Column ``c`` traverses its non-tree edge from low to high endpoint and
    returns through the tree; entries are +1/-1 by traversal direction, so
    every column is a circulation.
    """
    n, m = graph.node_count, graph.edge_count
    _, parent = graph.sink_tree
    tree = {e for _, e in parent.values()}

    def to_root(v: int) -> np.ndarray:
        vec = np.zeros(m)
        while v != n:
            up, e = parent[v]
            vec[e] += 1.0 if v < up else -1.0
            v = up
        return vec

    cols = []
    for e, (r, s) in enumerate(graph.edges):
        if e in tree:
            continue
        vec = to_root(s) - to_root(r)
        vec[e] += 1.0
        cols.append(vec)
    if not cols:
        return np.zeros((m, 0))
    return np.column_stack(cols)


def _scaled_gradient(flows, p: float, log_scale: float) -> np.ndarray:
    """``gradient(flows, p) / exp(log_scale)`` computed through logarithms."""
    a = np.abs(flows)
    with np.errstate(divide="ignore"):
        log_s = math.log(p) + (p - 1.0) * np.log(a) - log_scale
    return np.sign(flows) * np.exp(np.minimum(log_s, 700.0))


def _line_minimum(flows, direction, p, log_scale, signed=False) -> float:
    """Exact minimizer of the cost along ``flows + a * direction``.

    Bisection on the sign of the (scaled) directional derivative, which is
    increasing in ``a`` by convexity. Searches ``a >= 0`` only unless
    ``signed``; returns 0 when no decrease is available.
    """

    def slope(a):
        with np.errstate(over="ignore", invalid="ignore"):
            value = float(_scaled_gradient(flows + a * direction, p, log_scale) @ direction)
        return np.inf if np.isnan(value) else value

    sign = 1.0
    s0 = slope(0.0)
    if s0 >= 0:
        if not signed or s0 == 0:
            return 0.0
        sign = -1.0
    hi = 1.0
    for _ in range(60):
        if sign * slope(sign * hi) >= 0:
            break
        hi *= 2.0
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if sign * slope(sign * mid) > 0:
            hi = mid
        else:
            lo = mid
    return sign * lo


def oracle_general_p(
    graph: NetworkGraph,
    traffic,
    p: float,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> OracleSolution:
    """Damped Newton iteration on the cycle coordinates of the feasible set.

    The feasible loads are ``I0 + B z`` with ``I0`` the BFS-tree routing and
    ``B`` from :func:`cycle_basis`. Each iteration solves the dense reduced
    Newton system ``B^T Q B d = -B^T S`` and then picks the step by bisection
    on the sign of the directional derivative ``S(I + a B d) . B d``, which
    is monotone because the cost is convex. Starting point is the ``p = 2``
    optimum (nonzero on every cycle, which keeps the curvature finite for
    ``p < 2``); curvature is evaluated with loads floored at
    ``1e-12 * max|I|``.

    Stops once every cycle's reduced gradient ``|(B^T S)_c|`` is at most
    ``tol * (|B|^T |S|)_c``. The gradient spans ``(max|I| / min|I|)**(p-1)``,
    so neither an absolute threshold nor one scaled by ``max|S|`` means
    anything for large ``p``; ``gradient_norm`` reports this relative value.
    """
    p = _check_p(p)
    t = validate_traffic(graph, traffic)
    base = initial_feasible_flow(graph, t)
    basis = cycle_basis(graph)
    if basis.shape[1] == 0:
        return OracleSolution(base, cost(base, p), "nullspace-descent")

    # p = 2 optimum expressed in cycle coordinates (exact: basis has full rank)
    start = oracle_p2(graph, t).flows
    z = np.linalg.lstsq(basis, start - base, rcond=None)[0]
    flows = base + basis @ z

    magnitude = np.abs(basis).T

    def reduced(f):
        s = gradient(f, p)
        g = basis.T @ s
        # each cycle's gradient relative to the size of its own terms
        scale = magnitude @ np.abs(s)
        rel = np.divide(np.abs(g), scale, out=np.zeros_like(g), where=scale > 0)
        return g, float(np.max(rel))

    g, gnorm = reduced(flows)
    it = 0
    while gnorm > tol and it < max_iter:
        it += 1
        # curvature and gradient divided by the largest curvature, in logs,
        # so that neither under- nor overflows for large p
        a = np.abs(flows)
        top = max(float(a.max()), 1e-300)
        log_a = np.log(np.maximum(a, 1e-12 * top))
        log_q = math.log(p * (p - 1.0)) + (p - 2.0) * log_a
        log_c = float(log_q.max())
        q = np.exp(np.maximum(log_q - log_c, -600.0))
        h = (basis.T * q) @ basis
        g_scaled = basis.T @ _scaled_gradient(flows, p, log_c)
        # symmetric diagonal scaling: curvatures of different cycles can
        # differ by many orders of magnitude for large p
        dscale = 1.0 / np.sqrt(np.diag(h))
        hs = h * np.outer(dscale, dscale)
        try:
            d = -dscale * np.linalg.solve(hs, dscale * g_scaled)
        except np.linalg.LinAlgError:
            d = -dscale * np.linalg.lstsq(hs, dscale * g_scaled, rcond=None)[0]
        bd = basis @ d

        step = _line_minimum(flows, bd, p, log_c)
        new = flows + step * bd if step > 0 else flows
        if np.array_equal(new, flows):
            # Newton direction lost to rounding; fall back to one pass of
            # exact minimization along each cycle
            for c in range(basis.shape[1]):
                col = basis[:, c]
                step = _line_minimum(new, col, p, log_c, signed=True)
                new = new + step * col
            if np.array_equal(new, flows):
                break
        flows = new
        g, gnorm = reduced(flows)
    return OracleSolution(
        flows,
        cost(flows, p),
        "nullspace-descent",
        converged=gnorm <= tol,
        gradient_norm=gnorm,
        iterations=it,
    )


def brute_force_small(
    graph: NetworkGraph,
    traffic,
    p: float,
    grid: float = 1e-3,
    chunk: int = 200_000,
) -> OracleSolution:
    """Grid scan of the cycle coordinates on ``[-|T|_1, |T|_1]``, then a
    compass search from the best grid point down to step ``1e-12``.

    Only for graphs with at most two independent cycles.
    """
    p = _check_p(p)
    t = validate_traffic(graph, traffic)
    base = initial_feasible_flow(graph, t)
    basis = cycle_basis(graph)
    dim = basis.shape[1]
    if dim > 2:
        raise ValueError(f"brute force handles at most 2 cycle coordinates, got {dim}")
    if dim == 0:
        return OracleSolution(base, cost(base, p), "grid-search")

    bound = max(float(np.sum(t)), grid)
    axis = np.arange(-bound, bound + 0.5 * grid, grid)
    if dim == 1:
        points = axis[:, None]
    else:
        a, b = np.meshgrid(axis, axis, indexing="ij")
        points = np.column_stack([a.ravel(), b.ravel()])

    best_val, best_z = np.inf, None
    for start in range(0, len(points), chunk):
        block = points[start : start + chunk]
        vals = np.sum(np.abs(base + block @ basis.T) ** p, axis=1)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_z = float(vals[k]), block[k].copy()

    z, f, step = best_z, best_val, grid
    directions = np.vstack([np.eye(dim), -np.eye(dim)])
    while step > 1e-12:
        moved = False
        for d in directions:
            trial = z + step * d
            val = cost(base + basis @ trial, p)
            if val < f:
                z, f, moved = trial, val, True
                break
        if not moved:
            step *= 0.5
    flows = base + basis @ z
    return OracleSolution(flows, cost(flows, p), "grid-search")


def triangle_direct_share(p: float) -> float:
    """Load on edge (1, 3) of the triangle with one unit injected at node 1.

    Stationarity of ``x**p + 2 (1-x)**p`` gives ``(x / (1-x))**(p-1) = 2``.
    """
    p = _check_p(p)
    k = 2.0 ** (1.0 / (p - 1.0))
    return k / (1.0 + k)


def oracle_triangle(p: float) -> OracleSolution:
    x = triangle_direct_share(p)
    flows = np.array([1.0 - x, x, 1.0 - x])
    return OracleSolution(flows, cost(flows, p), "scalar-stationarity")
