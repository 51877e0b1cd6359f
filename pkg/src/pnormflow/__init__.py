"""Congestion-minimizing single-commodity flows by p-norm SQP with Jacobi
potential iterations."""

from .graph_model import (
    CutBalance,
    CutSet,
    DisconnectedGraphError,
    FeasibilityCheck,
    NetworkGraph,
    build_incidence,
    check_feasibility,
    cut_balance_metric,
    initial_feasible_flow,
    max_unit_flow,
    min_cut,
    tree_route,
    validate_traffic,
)
from .objective import (
    QuadraticModel,
    cost,
    cost_change,
    default_regularization,
    edge_weights,
    gradient,
    hessian_diag,
    model_cost,
    quadratic_model,
    subproblem_rhs,
)
from .oracles import (
    OracleSolution,
    brute_force_small,
    cycle_basis,
    oracle_general_p,
    oracle_p2,
    oracle_triangle,
    triangle_direct_share,
)
from .solver import (
    IterationRecord,
    PotentialSolve,
    SolveReport,
    SolverOptions,
    StepResult,
    jacobi_sweep,
    node_residual,
    recover_correction,
    solve,
    solve_potentials,
    sqp_step,
)

__all__ = [name for name in dir() if not name.startswith("_")]
