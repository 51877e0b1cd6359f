"""Simulated-distributed SQP solver for p-norm flow routing.

Each outer step linearizes the cost around the current loads, turns the
quadratic subproblem into a resistor network (resistance ``r_m`` per edge,
injection ``b_n`` per node) and solves for node potentials with synchronous
Jacobi sweeps: every node recomputes its potential from the previous-sweep
potentials of its neighbours, the destination stays at 0. The correction is
read off edge by edge and a backtracking line search keeps the cost
decreasing.

Two safeguards sit on top of the plain scheme, both local to a node and its
links:

* Whatever flow imbalance an unfinished potential solve leaves behind is
  pushed to the destination along a BFS tree (one converge-cast), so every
  correction is an exact circulation and the loads stay feasible.
* For ``p != 2`` the ratio between the largest and smallest resistance is
  capped at ``K`` by raising small loads to a floor before building ``r``.
  Jacobi needs roughly ``K`` sweeps per digit, so ``K`` is lowered whenever the
  potential solve misses its budget or the line search stalls, and raised after
  clean full steps. The node offsets use ``S_m / (2 r_m)``, which equals
  ``I_m / (p-1)`` wherever the floor is inactive, so a zero correction still
  certifies a stationary point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph_model import (
    NetworkGraph,
    build_incidence,
    check_feasibility,
    initial_feasible_flow,
    tree_route,
    validate_traffic,
)
from .objective import _check_p, cost, cost_change, default_regularization, gradient

log = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    """Tolerances and budgets for :func:`solve`.

    ``inner_tol`` bounds the node flow-balance residual of the potential
    solve (traffic units). ``inner_max_sweeps`` defaults to ``10 * N**2``.
    ``regularization`` is the load floor for the resistances; ``None`` uses
    ``1e-6 * (1 + max |I_m|)`` recomputed at every step.

    ``contrast_limit`` is the starting resistance ratio cap ``K`` (``None``
    leaves only the regularization floor). ``contrast_factor`` is how much
    ``K`` moves per adjustment. ``tree_repair`` toggles the converge-cast
    that makes corrections exact circulations.
    """

    p: float = 2.0
    inner_tol: float = 1e-10
    inner_max_sweeps: int | None = None
    outer_tol: float = 1e-8
    outer_max_iters: int = 200
    feas_tol: float = 1e-9
    regularization: float | None = None
    line_search_shrink: float = 0.5
    line_search_min_step: float = 2.0**-20
    warm_start: bool = True
    contrast_limit: float | None = 1e3
    contrast_factor: float = 10.0
    tree_repair: bool = True

    def __post_init__(self):
        self.p = _check_p(self.p)
        for name in ("inner_tol", "outer_tol", "feas_tol", "line_search_min_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.line_search_shrink < 1.0:
            raise ValueError("line_search_shrink must lie in (0, 1)")
        if self.regularization is not None and not self.regularization > 0:
            raise ValueError("regularization must be positive")
        if self.outer_max_iters < 1:
            raise ValueError("outer_max_iters must be at least 1")
        if self.inner_max_sweeps is not None and self.inner_max_sweeps < 1:
            raise ValueError("inner_max_sweeps must be at least 1")
        if self.contrast_limit is not None and not self.contrast_limit >= 1.0:
            raise ValueError("contrast_limit must be at least 1")
        if not self.contrast_factor > 1.0:
            raise ValueError("contrast_factor must exceed 1")

    def max_sweeps(self, graph: NetworkGraph) -> int:
        if self.inner_max_sweeps is not None:
            return int(self.inner_max_sweeps)
        return 10 * graph.node_count**2


class _Sweeper:
    """Neighbour-sum operator for one set of resistances."""

    def __init__(self, graph: NetworkGraph, weights):
        r = np.asarray(weights, dtype=float)
        if r.shape != (graph.edge_count,):
            raise ValueError(f"weights must have {graph.edge_count} entries, got {r.shape}")
        if np.any(~(r > 0)) or np.any(~np.isfinite(r)):
            raise ValueError("edge resistances must be positive and finite")
        n = graph.node_count
        g = 1.0 / r
        rows = np.concatenate([graph.tails, graph.heads])
        cols = np.concatenate([graph.heads, graph.tails])
        self.n = n
        self.conductance = sp.csr_matrix((np.concatenate([g, g]), (rows, cols)), shape=(n, n))
        self.degree = np.asarray(self.conductance.sum(axis=1)).ravel()

    def rhs(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.n - 1,):
            raise ValueError(f"rhs must have {self.n - 1} entries, got {b.shape}")
        full = np.zeros(self.n)
        full[: self.n - 1] = b
        return full

    def __call__(self, full_rhs: np.ndarray, u: np.ndarray) -> np.ndarray:
        new = (full_rhs + self.conductance @ u) / self.degree
        new[self.n - 1] = 0.0
        return new


def jacobi_sweep(graph: NetworkGraph, weights, rhs, potentials) -> np.ndarray:
    """One synchronous round of node potential updates.

    Node ``n < N`` sets
    ``u_n = (b_n + sum_k u_k / r_nk) / sum_k 1 / r_nk`` over its neighbours
    ``k`` using only the incoming ``potentials``; ``u_N`` is pinned to 0.

    Args:
        graph: The network.
        weights: Positive edge resistances, length ``M``.
        rhs: Node injections ``b``, length ``N - 1``.
        potentials: Current potentials, length ``N``.
    """
    op = _Sweeper(graph, weights)
    u = np.array(potentials, dtype=float)
    if u.shape != (graph.node_count,):
        raise ValueError(f"potentials must have {graph.node_count} entries, got {u.shape}")
    u[-1] = 0.0
    return op(op.rhs(rhs), u)


def node_residual(graph: NetworkGraph, weights, rhs, potentials) -> np.ndarray:
    """Flow-balance error ``sum_k (u_n - u_k) / r_nk - b_n`` for ``n < N``."""
    r = np.asarray(weights, dtype=float)
    u = np.asarray(potentials, dtype=float)
    n = graph.node_count
    flow = (u[graph.tails] - u[graph.heads]) / r
    net = np.bincount(graph.tails, flow, n) - np.bincount(graph.heads, flow, n)
    return net[: n - 1] - np.asarray(rhs, dtype=float)


@dataclass
class PotentialSolve:
    potentials: np.ndarray
    sweeps: int
    residual: float
    converged: bool


def solve_potentials(
    graph: NetworkGraph,
    weights,
    rhs,
    tol: float = 1e-10,
    max_sweeps: int | None = None,
    initial=None,
) -> PotentialSolve:
    """Iterate :func:`jacobi_sweep` until the node balance is within ``tol``.

    A node's balance error equals its conductance sum times the change its
    next sweep would make, so every node can test it locally. The returned
    potentials are the iterate whose residual was certified (the last one on
    budget exhaustion). Non-convergence is reported, not raised.
    """
    n = graph.node_count
    op = _Sweeper(graph, weights)
    b = op.rhs(rhs)
    if max_sweeps is None:
        max_sweeps = 10 * n**2
    u = np.zeros(n) if initial is None else np.array(initial, dtype=float)
    u[n - 1] = 0.0
    deg = op.degree[: n - 1]

    sweeps = 0
    while True:
        new = op(b, u)
        sweeps += 1
        residual = float(np.max(deg * np.abs(new[: n - 1] - u[: n - 1])))
        if residual <= tol:
            return PotentialSolve(u, sweeps, residual, True)
        if sweeps >= max_sweeps:
            return PotentialSolve(new, sweeps, residual, False)
        u = new


def recover_correction(
    graph: NetworkGraph, potentials, weights, loads, p: float, offsets=None
) -> np.ndarray:
    """Edge correction ``(u_r - u_s) / r_m - I_m / (p-1)``.

    ``offsets`` replaces ``I_m / (p-1)`` when the resistances were built from
    floored loads (see :func:`subproblem`).
    """
    u = np.asarray(potentials, dtype=float)
    r = np.asarray(weights, dtype=float)
    if offsets is None:
        offsets = np.asarray(loads, dtype=float) / (_check_p(p) - 1.0)
    return (u[graph.tails] - u[graph.heads]) / r - offsets


def load_floor(loads, p: float, eps: float, contrast: float | None) -> float:
    """Smallest load used for the resistances.

    With a contrast cap ``K`` the floor is ``K**(-1/|p-2|) * max|I|``, which
    keeps ``max r / min r <= K``; it never drops below ``eps``.
    """
    p = _check_p(p)
    if contrast is None or p == 2.0 or not np.isfinite(contrast):
        return eps
    top = float(np.max(np.abs(loads))) if np.size(loads) else 0.0
    return max(eps, contrast ** (-1.0 / abs(p - 2.0)) * top)


@dataclass(frozen=True)
class Subproblem:
    """Resistor network for one SQP step.

    ``weights`` are scaled to unit geometric mean and ``log_scale`` is the
    log of the divisor; ``offsets`` are ``S_m / (2 r_m)`` in true units and
    ``rhs`` the node injections they induce plus any conservation drift.
    """

    weights: np.ndarray
    log_scale: float
    offsets: np.ndarray
    rhs: np.ndarray
    floor: float


def subproblem(
    graph: NetworkGraph, loads, traffic, p: float, floor: float
) -> Subproblem:
    """Build normalized resistances, offsets and injections.

    Everything is computed in log space so that ``|I|**(p-2)`` cannot under-
    or overflow for large ``p``; dividing all resistances by a common factor
    leaves the subproblem flows unchanged.
    """
    p = _check_p(p)
    if not floor > 0:
        raise ValueError(f"load floor must be positive, got {floor}")
    x = np.asarray(loads, dtype=float)
    a = np.abs(x)
    log_r = math.log(0.5 * p * (p - 1.0)) + (p - 2.0) * np.log(np.maximum(a, floor))
    shift = float(np.mean(log_r)) if log_r.size else 0.0
    weights = np.exp(np.clip(log_r - shift, -700.0, 700.0))
    # S/(2r) = sign(I) |I|^(p-1) / ((p-1) max(|I|, floor)^(p-2))
    with np.errstate(divide="ignore"):
        log_off = (p - 1.0) * np.log(a) - math.log(p - 1.0) - (p - 2.0) * np.log(
            np.maximum(a, floor)
        )
    offsets = np.sign(x) * np.exp(log_off)
    incidence = build_incidence(graph)
    t = np.asarray(traffic, dtype=float)
    rhs = incidence @ offsets + (t - incidence @ x)
    return Subproblem(weights, shift, offsets, rhs, floor)


def _certified_norm(correction, loads, p: float, floor: float, eps: float) -> float:
    """Per-edge flow error estimate ``max (r'_m / r_m) |i_m|``.

    ``r'`` uses the contrast floor and ``r`` only ``eps``. The mismatch
    between an edge's gradient and its potential difference is ``2 r'_m i_m``
    and dividing by the regularized curvature ``2 r_m`` turns it into flow
    units. Where the floor is inactive the ratio is 1.
    """
    if floor <= eps or correction.size == 0:
        return float(np.max(np.abs(correction))) if correction.size else 0.0
    a = np.abs(loads)
    log_ratio = (p - 2.0) * (np.log(np.maximum(a, floor)) - np.log(np.maximum(a, eps)))
    with np.errstate(over="ignore"):
        return float(np.max(np.abs(correction) * np.exp(np.minimum(log_ratio, 700.0))))


@dataclass
class StepResult:
    loads: np.ndarray
    correction: np.ndarray
    step_length: float
    cost_change: float
    inner: PotentialSolve
    log_scale: float
    null_residual: float
    floor: float
    certified_norm: float = 0.0
    stalled: bool = False

    @property
    def correction_norm(self) -> float:
        return float(np.max(np.abs(self.correction))) if self.correction.size else 0.0


def sqp_step(
    graph: NetworkGraph,
    loads,
    traffic,
    opts: SolverOptions,
    warm=None,
    contrast: float | None = None,
    feas_slack: float = 0.0,
) -> StepResult:
    """One SQP correction with backtracking.

    Args:
        graph: The network.
        loads: Current feasible loads.
        traffic: Node injections ``T``.
        opts: Solver options.
        warm: Optional ``(potentials, log_scale)`` from the previous step; the
            potentials are rescaled to this step's weight normalization.
        contrast: Resistance ratio cap ``K``; ``None`` keeps only the
            regularization floor.
        feas_slack: Extra feasibility tolerance granted to ``loads`` on top of
            ``opts.feas_tol``.

    Returns:
        The accepted loads (unchanged on a stall) with diagnostics.
        ``cost_change`` is the accurately summed cost difference.

    Raises:
        ValueError: If ``loads`` violate conservation beyond the tolerance.
    """
    p = opts.p
    x = np.asarray(loads, dtype=float)
    t = np.asarray(traffic, dtype=float)
    check = check_feasibility(graph, x, t, opts.feas_tol + feas_slack)
    if not check.feasible:
        raise ValueError(
            f"sqp_step needs feasible loads; conservation residual {check.max_residual:.3e}"
        )

    eps = opts.regularization if opts.regularization is not None else default_regularization(x)
    sub = subproblem(graph, x, t, p, load_floor(x, p, eps, contrast))
    u0 = None
    if warm is not None:
        u_prev, shift_prev = warm
        u0 = np.asarray(u_prev, dtype=float) * math.exp(
            min(700.0, max(-700.0, shift_prev - sub.log_scale))
        )
        if not np.all(np.isfinite(u0)):
            u0 = None
    inner = solve_potentials(
        graph, sub.weights, sub.rhs, opts.inner_tol, opts.max_sweeps(graph), u0
    )
    if not inner.converged:
        log.debug("potential solve stopped after %d sweeps, residual %.3e", inner.sweeps, inner.residual)
    i = recover_correction(graph, inner.potentials, sub.weights, x, p, sub.offsets)
    incidence = build_incidence(graph)
    null_residual = float(np.max(np.abs(incidence @ i))) if i.size else 0.0
    if opts.tree_repair and i.size:
        i = i + tree_route(graph, -(incidence @ i))

    common = dict(
        correction=i,
        inner=inner,
        log_scale=sub.log_scale,
        null_residual=null_residual,
        floor=sub.floor,
        certified_norm=_certified_norm(i, x, p, sub.floor, eps),
    )
    inorm = float(np.max(np.abs(i))) if i.size else 0.0
    if inorm <= opts.outer_tol:
        # already in the stopping neighbourhood: take the step if it does no harm
        delta = cost_change(x, i, p)
        if delta <= 0:
            return StepResult(x + i, step_length=1.0, cost_change=delta, **common)
        return StepResult(x.copy(), step_length=0.0, cost_change=0.0, **common)

    alpha = 1.0
    while alpha >= opts.line_search_min_step:
        delta = cost_change(x, alpha * i, p)
        if delta < 0:
            return StepResult(x + alpha * i, step_length=alpha, cost_change=delta, **common)
        alpha *= opts.line_search_shrink
    return StepResult(x.copy(), step_length=0.0, cost_change=0.0, stalled=True, **common)


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    feasibility_residual: float
    correction_norm: float
    inner_sweeps: int
    step_length: float
    inner_converged: bool = True
    contrast: float | None = None


@dataclass
class SolveReport:
    """Outcome of :func:`solve`.

    ``cost`` values in the records are accumulated from accurately summed
    per-step differences starting at ``initial_cost``. ``inner_slack`` is the
    largest conservation error a correction carried before tree repair (it
    does not reach the loads when repair is on).
    """

    loads: np.ndarray
    initial_loads: np.ndarray
    initial_cost: float
    records: list[IterationRecord]
    converged: bool
    reason: str
    feasibility_residual: float
    inner_slack: float
    options: SolverOptions
    potentials: np.ndarray | None = field(default=None, repr=False)

    @property
    def cost(self) -> float:
        return self.records[-1].cost if self.records else self.initial_cost

    @property
    def iterations(self) -> int:
        return len(self.records)

    def costs(self) -> np.ndarray:
        return np.array([self.initial_cost] + [rec.cost for rec in self.records])


def solve(
    graph: NetworkGraph, traffic, opts: SolverOptions | None = None, initial=None
) -> SolveReport:
    """Minimize ``sum |I_m|**p`` subject to conservation by repeated SQP steps.

    Starts from :func:`initial_feasible_flow` unless ``initial`` loads are
    given. Stops when a correction computed from a converged potential solve
    has max-norm at most ``opts.outer_tol``, also after rescaling each edge by
    how much the contrast floor stiffened it, when the line search stalls with
    no contrast left to give up, or when the outer budget runs out. Never
    raises on non-convergence.
    """
    opts = opts or SolverOptions()
    t = validate_traffic(graph, traffic)
    x = initial_feasible_flow(graph, t) if initial is None else np.array(initial, float)
    incidence = build_incidence(graph)
    initial_loads = x.copy()
    c_run = cost(x, opts.p)
    c_init = c_run

    adaptive = opts.contrast_limit is not None and opts.p != 2.0
    contrast = opts.contrast_limit if adaptive else None
    k_max = 1e300

    records: list[IterationRecord] = []
    slack = 0.0
    repaired_slack = 0.0
    warm = None
    converged = False
    reason = "max_iterations"
    potentials = None
    for it in range(1, opts.outer_max_iters + 1):
        step = sqp_step(
            graph, x, t, opts, warm=warm, contrast=contrast, feas_slack=slack
        )
        x = step.loads
        c_run += step.cost_change
        repaired_slack = max(repaired_slack, step.null_residual)
        if not opts.tree_repair:
            slack += step.step_length * step.null_residual
        if opts.warm_start:
            warm = (step.inner.potentials, step.log_scale)
        potentials = step.inner.potentials * math.exp(min(700.0, step.log_scale))
        feas = float(np.max(np.abs(incidence @ x - t))) if t.size else 0.0
        records.append(
            IterationRecord(
                iteration=it,
                cost=c_run,
                feasibility_residual=feas,
                correction_norm=step.correction_norm,
                inner_sweeps=step.inner.sweeps,
                step_length=step.step_length,
                inner_converged=step.inner.converged,
                contrast=contrast,
            )
        )
        log.debug(
            "iter %d cost %.12g |i| %.3e alpha %g sweeps %d K %s",
            it,
            c_run,
            step.correction_norm,
            step.step_length,
            step.inner.sweeps,
            contrast,
        )
        if (
            step.correction_norm <= opts.outer_tol
            and step.certified_norm <= opts.outer_tol
            and step.inner.converged
        ):
            converged, reason = True, "correction_below_tol"
            break
        if step.stalled:
            if adaptive and contrast > 1.0:
                contrast = max(1.0, contrast / opts.contrast_factor)
                continue
            reason = "stalled"
            break
        if adaptive:
            if not step.inner.converged:
                contrast = max(1.0, contrast / opts.contrast_factor)
            elif step.step_length == 1.0:
                contrast = min(k_max, contrast * opts.contrast_factor)

    feas = float(np.max(np.abs(incidence @ x - t))) if t.size else 0.0
    return SolveReport(
        loads=x,
        initial_loads=initial_loads,
        initial_cost=c_init,
        records=records,
        converged=converged,
        reason=reason,
        feasibility_residual=feas,
        inner_slack=slack if not opts.tree_repair else repaired_slack,
        options=opts,
        potentials=potentials,
    )
