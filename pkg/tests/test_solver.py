import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphs import DIAMOND, PATH3, SINGLE, TRIANGLE, random_graph, random_traffic
from pnormflow import (
    NetworkGraph,
    SolverOptions,
    build_incidence,
    check_feasibility,
    cost,
    initial_feasible_flow,
    jacobi_sweep,
    node_residual,
    oracle_p2,
    recover_correction,
    solve,
    solve_potentials,
    sqp_step,
    triangle_direct_share,
)
from pnormflow.oracles import cycle_basis
from pnormflow.solver import load_floor, subproblem

ONES3 = np.ones(3)


# -- Jacobi -----------------------------------------------------------------


def test_sweep_from_zero():
    np.testing.assert_array_equal(jacobi_sweep(TRIANGLE, ONES3, [1, 0], np.zeros(3)), [0.5, 0, 0])


def test_sweep_fixed_point():
    u = np.array([2 / 3, 1 / 3, 0])
    np.testing.assert_allclose(jacobi_sweep(TRIANGLE, ONES3, [1, 0], u), u, atol=1e-15)


def test_sweep_zero_is_fixed():
    g = random_graph(np.random.default_rng(3), 9, 14)
    out = jacobi_sweep(g, np.full(14, 2.5), np.zeros(8), np.zeros(9))
    np.testing.assert_array_equal(out, np.zeros(9))


def test_sweep_pins_the_destination():
    out = jacobi_sweep(TRIANGLE, ONES3, [1, 0], [5.0, 5.0, 5.0])
    assert out[2] == 0.0


def test_sweep_reads_previous_values_only():
    # a sequential (Gauss-Seidel) pass would feed node 1's new value to node 2
    u = np.array([0.0, 0.0, 0.0])
    out = jacobi_sweep(PATH3, np.ones(2), [1, 0], u)
    np.testing.assert_array_equal(out, [1.0, 0.0, 0.0])


def test_sweep_rejects_bad_weights():
    with pytest.raises(ValueError):
        jacobi_sweep(TRIANGLE, [1, 0, 1], [1, 0], np.zeros(3))
    with pytest.raises(ValueError):
        jacobi_sweep(TRIANGLE, [1, np.inf, 1], [1, 0], np.zeros(3))


def test_potentials_triangle():
    res = solve_potentials(TRIANGLE, ONES3, [1, 0], tol=1e-10)
    assert res.converged
    np.testing.assert_allclose(res.potentials, [2 / 3, 1 / 3, 0], atol=1e-10)
    assert res.sweeps <= 70


def test_potentials_single_edge_exact_after_one_sweep():
    rho, beta = 2.5, 0.4
    once = jacobi_sweep(SINGLE, [rho], [beta], np.zeros(2))
    assert once[0] == pytest.approx(beta * rho, rel=1e-15)
    res = solve_potentials(SINGLE, [rho], [beta])
    assert res.converged and res.potentials[0] == once[0]


def test_potentials_path():
    res = solve_potentials(PATH3, np.ones(2), [1, 0], tol=1e-12)
    np.testing.assert_allclose(res.potentials, [2, 1, 0], atol=1e-11)


def test_potentials_budget_is_reported():
    res = solve_potentials(PATH3, np.ones(2), [1, 0], tol=1e-12, max_sweeps=3)
    assert not res.converged and res.sweeps == 3 and res.residual > 1e-12


def test_potentials_default_budget():
    g = random_graph(np.random.default_rng(5), 6, 6)
    res = solve_potentials(g, np.full(6, 1e3), np.ones(5), tol=1e-300)
    assert res.sweeps == 10 * 36


@given(st.integers(3, 14), st.integers(0, 15), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_converged_potentials_solve_the_node_equations(n, extra, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, n - 1 + extra)
    r = rng.uniform(0.2, 5.0, g.edge_count)
    b = rng.normal(size=n - 1)
    res = solve_potentials(g, r, b, tol=1e-10, max_sweeps=200 * n * n)
    assert res.converged
    assert np.max(np.abs(node_residual(g, r, b, res.potentials))) <= 10 * 1e-10


@given(st.integers(3, 12), st.integers(0, 12), st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_sweep_is_label_independent(n, extra, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, n - 1 + extra)
    r = rng.uniform(0.5, 2.0, g.edge_count)
    b = rng.normal(size=n - 1)
    u = np.append(rng.normal(size=n - 1), 0.0)
    # relabel nodes 1..N-1 (the destination keeps its label)
    perm = np.append(rng.permutation(n - 1) + 1, n)
    pairs = [(int(perm[a - 1]), int(perm[c - 1])) for a, c in g.edges]
    order = sorted(range(g.edge_count), key=lambda m: tuple(sorted(pairs[m])))
    h = NetworkGraph(n, [tuple(sorted(pairs[m])) for m in order])
    u_h = np.empty(n)
    u_h[perm - 1] = u
    b_h = np.empty(n - 1)
    b_h[perm[:-1] - 1] = b
    out = jacobi_sweep(g, r, b, u)
    out_h = jacobi_sweep(h, r[order], b_h, u_h)
    np.testing.assert_allclose(out_h[perm - 1], out, rtol=1e-15, atol=1e-15)


# -- corrections ------------------------------------------------------------


def test_recover_correction_triangle():
    i = recover_correction(TRIANGLE, [2 / 3, 1 / 3, 0], ONES3, [0, 1, 0], 2)
    np.testing.assert_allclose(i, [1 / 3, -1 / 3, 1 / 3], atol=1e-15)
    np.testing.assert_allclose(build_incidence(TRIANGLE) @ i, [0, 0], atol=1e-15)


def test_recover_correction_uniform_potentials():
    i = recover_correction(DIAMOND, np.full(4, 3.0), np.ones(4), np.zeros(4), 3)
    np.testing.assert_array_equal(i, np.zeros(4))


@given(st.integers(3, 12), st.integers(1, 12), st.integers(0, 2**31), st.sampled_from([1.5, 2, 3]))
@settings(max_examples=30, deadline=None)
def test_exact_potentials_give_circulations(n, extra, seed, p):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, n - 1 + extra)
    t = random_traffic(rng, n)
    x = initial_feasible_flow(g, t) + cycle_basis(g) @ rng.normal(size=g.cycle_rank())
    sub = subproblem(g, x, t, p, load_floor(x, p, 1e-6 * (1 + np.abs(x).max()), None))
    res = solve_potentials(g, sub.weights, sub.rhs, tol=1e-10, max_sweeps=500 * n * n)
    assert res.converged
    i = recover_correction(g, res.potentials, sub.weights, x, p, sub.offsets)
    assert np.max(np.abs(build_incidence(g) @ i)) <= 100 * 1e-10


def test_subproblem_reduces_to_plain_rhs_when_unclamped():
    x = np.array([0.3, 0.7, 0.3])
    sub = subproblem(TRIANGLE, x, [1, 0], 3, 1e-9)
    np.testing.assert_allclose(sub.offsets, x / 2, rtol=1e-14)
    np.testing.assert_allclose(sub.rhs, [0.5, 0.0], atol=1e-15)


def test_normalization_leaves_the_correction_unchanged():
    rng = np.random.default_rng(8)
    g = random_graph(rng, 7, 10)
    t = random_traffic(rng, 7)
    x = initial_feasible_flow(g, t) + cycle_basis(g) @ rng.uniform(0.2, 0.5, g.cycle_rank())
    p = 3.0
    sub = subproblem(g, x, t, p, 1e-6)
    raw = sub.weights * np.exp(sub.log_scale)
    a = solve_potentials(g, sub.weights, sub.rhs, tol=1e-13, max_sweeps=10**6)
    b = solve_potentials(g, raw, sub.rhs, tol=1e-13, max_sweeps=10**6)
    ia = recover_correction(g, a.potentials, sub.weights, x, p, sub.offsets)
    ib = recover_correction(g, b.potentials, raw, x, p, sub.offsets)
    np.testing.assert_allclose(ia, ib, atol=1e-10)
    np.testing.assert_allclose(np.exp(np.mean(np.log(sub.weights))), 1.0, rtol=1e-12)


# -- SQP step ---------------------------------------------------------------


def test_step_p2_triangle_lands_on_optimum():
    step = sqp_step(TRIANGLE, [0, 1, 0], [1, 0], SolverOptions(p=2))
    assert step.step_length == 1.0
    np.testing.assert_allclose(step.loads, [1 / 3, 2 / 3, 1 / 3], atol=1e-10)
    assert step.cost_change == pytest.approx(2 / 3 - 1, abs=1e-10)


def test_step_at_optimum_is_trivial():
    x = np.array([1 / 3, 2 / 3, 1 / 3])
    step = sqp_step(TRIANGLE, x, [1, 0], SolverOptions(p=2))
    assert step.correction_norm < 1e-9
    assert abs(cost(step.loads, 2) - cost(x, 2)) <= 1e-12


def test_step_single_edge_has_no_freedom():
    step = sqp_step(SINGLE, [0.7], [0.7], SolverOptions(p=3))
    assert step.correction_norm == 0.0
    assert step.loads[0] == 0.7


def test_step_rejects_infeasible_loads():
    with pytest.raises(ValueError, match="feasible"):
        sqp_step(TRIANGLE, [1, 1, 0], [1, 0], SolverOptions(p=2))


@given(st.integers(3, 12), st.integers(1, 12), st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_p2_single_step_from_any_feasible_start(n, extra, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, n - 1 + extra)
    t = random_traffic(rng, n)
    x = initial_feasible_flow(g, t) + cycle_basis(g) @ rng.normal(size=g.cycle_rank())
    opts = SolverOptions(p=2, inner_tol=1e-12, inner_max_sweeps=10**6)
    step = sqp_step(g, x, t, opts)
    best = oracle_p2(g, t).flows
    assert step.step_length == 1.0
    assert np.max(np.abs(step.loads - best)) <= 1e-8 * max(1.0, np.max(np.abs(best)))


# -- full solve -------------------------------------------------------------


def test_solve_triangle_p2():
    rep = solve(TRIANGLE, [1, 0], SolverOptions(p=2))
    assert rep.converged
    np.testing.assert_allclose(rep.loads, [1 / 3, 2 / 3, 1 / 3], atol=1e-9)
    assert rep.cost == pytest.approx(2 / 3, abs=1e-12)


@pytest.mark.parametrize("p", [1.5, 3, 16, 40])
def test_solve_triangle_matches_scalar_condition(p):
    rep = solve(TRIANGLE, [1, 0], SolverOptions(p=p))
    x = triangle_direct_share(p)
    assert rep.converged
    np.testing.assert_allclose(rep.loads, [1 - x, x, 1 - x], atol=1e-8)


def test_solve_path_returns_forced_flow():
    for p in (1.5, 2, 9):
        rep = solve(PATH3, [1, 1], SolverOptions(p=p))
        assert rep.converged
        np.testing.assert_array_equal(rep.loads, [1, 2])


def test_solve_zero_traffic():
    rep = solve(DIAMOND, [0, 0, 0], SolverOptions(p=3))
    assert rep.converged
    np.testing.assert_array_equal(rep.loads, np.zeros(4))


@given(st.integers(3, 12), st.integers(0, 10), st.integers(0, 2**31), st.sampled_from([1.5, 3, 4]))
@settings(max_examples=20, deadline=None)
def test_solve_invariants(n, extra, seed, p):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, n - 1 + extra)
    t = random_traffic(rng, n)
    rep = solve(g, t, SolverOptions(p=p, outer_max_iters=60))
    costs = rep.costs()
    assert np.all(np.diff(costs) <= 0)
    assert rep.cost == pytest.approx(cost(rep.loads, p), rel=1e-9)
    assert all(rec.feasibility_residual <= 1e-9 for rec in rep.records)
    assert check_feasibility(g, rep.loads, t, 1e-9).feasible


def test_solve_without_repair_tracks_slack():
    rng = np.random.default_rng(21)
    g = random_graph(rng, 10, 16)
    t = random_traffic(rng, 10)
    opts = SolverOptions(p=3, tree_repair=False, inner_max_sweeps=40, outer_max_iters=30)
    rep = solve(g, t, opts)
    assert rep.inner_slack > 0
    assert rep.feasibility_residual <= opts.feas_tol + rep.inner_slack


def test_solve_never_raises_on_budget_exhaustion():
    rng = np.random.default_rng(4)
    g = random_graph(rng, 12, 20)
    rep = solve(g, random_traffic(rng, 12), SolverOptions(p=8, outer_max_iters=3))
    assert not rep.converged and rep.reason == "max_iterations"
    assert rep.iterations == 3


def test_small_correction_under_a_contrast_floor_is_not_convergence():
    # The contrast floor stiffens lightly loaded edges by (floor/|I|)**(p-2),
    # so their corrections drop below outer_tol while the loads are still far
    # off. On this instance an unscaled test stops after 4 steps, 0.37 away.
    rng = np.random.default_rng(18)
    n = int(rng.integers(4, 8))
    g = random_graph(rng, n, n + int(rng.integers(0, 4)))
    t = random_traffic(rng, n)
    rep = solve(g, t, SolverOptions(p=16, outer_max_iters=60))
    assert not rep.converged
    small = [rec for rec in rep.records if rec.correction_norm <= 1e-8]
    assert small, "instance no longer exercises the floored regime"


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(p=1.0)
    with pytest.raises(ValueError):
        SolverOptions(inner_tol=0)
    with pytest.raises(ValueError):
        SolverOptions(line_search_shrink=1.0)
    with pytest.raises(ValueError):
        SolverOptions(contrast_limit=0.5)
    assert SolverOptions().max_sweeps(TRIANGLE) == 90
