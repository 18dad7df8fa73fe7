import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import enumerate_qp, random_qp
from resilient_dmpc.qp import (ActiveSetSolver, QpError, QpProblem, QpSolution, WarmStart, check_kkt,
                               dump_qp, load_qp, solve_qp)


def test_scalar_clamped_minimum():
    # (u - 1)^2 = u^2 - 2u + 1
    s = solve_qp(QpProblem([[2.0]], [-2.0], [[1.0]], [0.5]))
    assert s.optimal
    assert s.u_star[0] == pytest.approx(0.5, abs=1e-12)
    assert s.ineq_duals[0] == pytest.approx(1.0, abs=1e-12)


def test_equality_dual_sign_convention():
    s = solve_qp(QpProblem(2 * np.eye(2), np.zeros(2), E=[[1.0, 1.0]], d=[2.0]))
    assert s.optimal
    np.testing.assert_allclose(s.u_star, [1.0, 1.0], atol=1e-12)
    assert s.eq_duals[0] == pytest.approx(-2.0, abs=1e-12)


def test_empty_feasible_set_is_reported():
    s = solve_qp(QpProblem([[2.0]], [0.0], [[1.0], [-1.0]], [0.0, -1.0]))
    assert s.status == "infeasible"


def test_inconsistent_equalities_are_infeasible():
    p = QpProblem(np.eye(2), np.zeros(2), E=[[1.0, 0.0], [1.0, 0.0]], d=[0.0, 1.0])
    assert solve_qp(p).status == "infeasible"


def test_unconstrained_solution():
    H = np.array([[4.0, 1.0], [1.0, 3.0]])
    g = np.array([1.0, 2.0])
    s = solve_qp(QpProblem(H, g))
    np.testing.assert_allclose(s.u_star, np.linalg.solve(H, -g), atol=1e-12)


def test_rejects_indefinite_and_malformed():
    with pytest.raises(QpError):
        ActiveSetSolver(QpProblem(np.diag([1.0, -1.0]), np.zeros(2)))
    with pytest.raises(QpError):
        QpProblem(np.eye(2), np.zeros(3))
    with pytest.raises(QpError):
        QpProblem([[1.0, 2.0], [0.0, 1.0]], np.zeros(2))
    with pytest.raises(QpError):
        QpProblem(np.eye(2), np.zeros(2), A=np.ones((2, 2)), b=np.ones(3))


def test_check_kkt_flags_perturbation_and_negative_multiplier():
    rng = np.random.default_rng(3)
    p = random_qp(rng, 4, 5)
    s = solve_qp(p)
    assert s.optimal
    assert check_kkt(p, s).max_residual <= 1e-8
    moved = QpSolution(s.u_star + 1e-3, s.ineq_duals, s.eq_duals, s.status, 0.0)
    assert check_kkt(p, moved).stationarity > 1e-4
    mu = s.ineq_duals.copy()
    mu[0] = -0.5
    bad = QpSolution(s.u_star, mu, s.eq_duals, s.status, 0.0)
    rep = check_kkt(p, bad)
    assert rep.dual_feasibility == pytest.approx(0.5)
    assert not rep.dual_feasible


@pytest.mark.parametrize("seed", range(40))
def test_matches_enumeration(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(1, 6))
    m_in = int(rng.integers(0, 7))
    m_eq = int(rng.integers(0, min(n, 2) + 1))
    p = random_qp(rng, n, m_in, m_eq)
    ref = enumerate_qp(p.H, p.g, p.A, p.b, p.E, p.d)
    s = solve_qp(p)
    assert ref is not None and s.optimal
    np.testing.assert_allclose(s.u_star, ref[0], atol=1e-6)
    assert check_kkt(p, s).max_residual <= 1e-8


def test_degenerate_vertex_does_not_cycle():
    # three constraints through the same point in 2D
    A = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    p = QpProblem(np.eye(2), [-3.0, -3.0], A, [1.0, 1.0, 2.0])
    s = solve_qp(p)
    assert s.optimal
    np.testing.assert_allclose(s.u_star, [1.0, 1.0], atol=1e-12)


def test_warm_start_gives_same_answer():
    rng = np.random.default_rng(7)
    p = random_qp(rng, 5, 6, 1)
    cold = solve_qp(p)
    warm = solve_qp(p, warm_start=WarmStart(cold.u_star, cold.working_set))
    np.testing.assert_allclose(warm.u_star, cold.u_star, atol=1e-10)
    assert warm.iterations <= cold.iterations


def test_minimize_reuses_working_set():
    rng = np.random.default_rng(11)
    p = random_qp(rng, 4, 6)
    solver = ActiveSetSolver(p)
    u1, W1 = solver.minimize(p.g)
    u2, W2 = solver.minimize(p.g + 1e-9, u1, W1)
    np.testing.assert_allclose(u1, u2, atol=1e-7)
    assert W1 == W2


def test_identical_inputs_identical_outputs():
    rng = np.random.default_rng(5)
    p = random_qp(rng, 5, 6, 1)
    a, b = solve_qp(p), solve_qp(p)
    assert np.array_equal(a.u_star, b.u_star)
    assert np.array_equal(a.ineq_duals, b.ineq_duals)


def test_dump_round_trip():
    rng = np.random.default_rng(2)
    p = random_qp(rng, 3, 2, 1)
    q = load_qp(dump_qp(p))
    for name in "HgAbEd":
        assert np.array_equal(getattr(p, name), getattr(q, name))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(1e-3, 1e3))
def test_scaling_objective_keeps_minimizer(seed, alpha):
    rng = np.random.default_rng(seed)
    p = random_qp(rng, 4, 5, 1)
    s1 = solve_qp(p)
    s2 = solve_qp(QpProblem(alpha * p.H, alpha * p.g, p.A, p.b, p.E, p.d))
    assert s1.optimal and s2.optimal
    np.testing.assert_allclose(s1.u_star, s2.u_star, atol=1e-8 * (1 + np.abs(s1.u_star).max()))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shrink=st.floats(0.0, 0.5))
def test_tightening_constraints(seed, shrink):
    rng = np.random.default_rng(seed)
    p = random_qp(rng, 4, 5)
    s = solve_qp(p)
    slack = p.b - p.A @ s.u_star
    inactive = slack > 1e-6
    # tightening an inactive row by less than its slack changes nothing
    b2 = p.b - np.where(inactive, shrink * slack, 0.0)
    s2 = solve_qp(QpProblem(p.H, p.g, p.A, b2))
    np.testing.assert_allclose(s2.u_star, s.u_star, atol=1e-8)
    # tightening any row never lowers the optimal cost
    b3 = p.b - shrink
    s3 = solve_qp(QpProblem(p.H, p.g, p.A, b3))
    if s3.optimal:
        assert p.objective(s3.u_star) >= p.objective(s.u_star) - 1e-9 * (1 + abs(p.objective(s.u_star)))
