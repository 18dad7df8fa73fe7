import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import base_params
from resilient_dmpc.model import NetworkTopology, assemble_nominal_problem, build_agents
from resilient_dmpc.qp import solve_qp
from resilient_dmpc.robust import (TighteningError, feasibility_condition, feasibility_threshold, robust_bounds,
                                   tighten_constraints, worst_case_disturbance)

B = -0.00025


def star(limits, prm=None):
    n = len(limits) + 1
    edges = tuple((1, j) for j in range(2, n + 1))
    topo = NetworkTopology(n, edges, dict(zip(edges, limits)), 0.25)
    prm = prm or base_params()
    return build_agents(topo, {i: prm for i in topo.agents})[1]


def test_worst_case_examples():
    ag = star([100.0, 100.0])
    assert worst_case_disturbance(ag) == 250.0
    assert worst_case_disturbance(ag, (0, 0)) == 50.0
    het = star([80.0, 100.0])
    assert worst_case_disturbance(het, (1, 0)) == pytest.approx(210.0)
    with pytest.raises(ValueError):
        worst_case_disturbance(ag, (1, 2))


def test_threshold_and_gate():
    prm = base_params()
    assert feasibility_threshold(prm, B) == pytest.approx(300.0)
    assert feasibility_condition(prm, 250.0, B)
    assert feasibility_condition(prm, 300.0, B)
    assert not feasibility_condition(prm, 301.0, B)


def test_tightened_windows():
    rb = robust_bounds(base_params(), 250.0, B)
    assert rb.soc_window == pytest.approx((0.4625, 0.6375))
    assert rb.storage_window == pytest.approx((-50.0, 50.0))


def test_zero_disturbance_is_identity():
    ag = star([100.0])
    base = assemble_nominal_problem(ag, 0.55, [600.0] * 4, 4)
    out = tighten_constraints(ag, 0.0, base)
    for name in ("lb", "ub", "soc_lo", "soc_hi"):
        np.testing.assert_array_equal(getattr(out, name), getattr(base, name))


def test_tighten_errors_exactly_when_gate_fails():
    ag = star([100.0])
    base = assemble_nominal_problem(ag, 0.55, [600.0] * 4, 4)
    for w in (0.0, 120.0, 250.0, 299.9, 300.0, 300.1, 301.0, 500.0):
        if feasibility_condition(ag.params, w, ag.b):
            tighten_constraints(ag, w, base)
        else:
            with pytest.raises(TighteningError):
                tighten_constraints(ag, w, base)


@settings(max_examples=60, deadline=None)
@given(w=st.floats(0.0, 300.0), x0=st.floats(0.47, 0.63), load=st.floats(100.0, 1500.0),
       seed=st.integers(0, 2**31))
def test_tightened_feasible_points_are_nominal_feasible(w, x0, load, seed):
    ag = star([100.0, 100.0])
    base = assemble_nominal_problem(ag, x0, [load] * 3, 3)
    tight = tighten_constraints(ag, w, base)
    rng = np.random.default_rng(seed)
    g = rng.normal(size=tight.n) * 1e3
    s = solve_qp(tight.to_qp(g))
    if not s.optimal:
        return
    u = s.u_star
    assert tight.is_feasible(u, tol=1e-6)
    assert base.is_feasible(u, tol=1e-6)


@settings(max_examples=60, deadline=None)
@given(w=st.floats(0.0, 300.0), x0=st.floats(0.47, 0.63), frac=st.floats(-1.0, 1.0))
def test_disturbance_within_bound_keeps_limits(w, x0, frac):
    prm = base_params()
    ag = star([100.0])
    base = assemble_nominal_problem(ag, x0, [700.0] * 2, 2)
    tight = tighten_constraints(ag, w, base)
    s = solve_qp(tight.to_qp())
    if not s.optimal:
        return
    p_st = s.u_star[0]
    x_start = tight.x0
    lo, hi = tight.reachable_soc_window()
    if lo[0] < tight.soc_lo[0] or hi[0] > tight.soc_hi[0]:
        return  # window relaxed because x0 starts outside it
    realized = p_st + frac * w
    assert -prm.p_ch - 1e-9 <= realized <= prm.p_dh + 1e-9
    x_next = prm.a * x_start + ag.b * realized
    assert prm.x_min - 1e-12 <= x_next <= prm.x_max + 1e-12


@settings(max_examples=40, deadline=None)
@given(lims=st.lists(st.floats(1.0, 150.0), min_size=1, max_size=4), d=st.floats(0.0, 100.0),
       bump=st.floats(0.0, 50.0), k=st.integers(0, 3))
def test_worst_case_monotone(lims, d, bump, k):
    ag = star(lims)
    w = worst_case_disturbance(ag, d_max=d)
    assert worst_case_disturbance(ag, d_max=d + bump) >= w
    k = k % len(lims)
    bigger = list(lims)
    bigger[k] += bump
    assert worst_case_disturbance(star(bigger), d_max=d) >= w
    v = [1] * len(lims)
    v[k] = 0
    assert worst_case_disturbance(ag, v, d_max=d) <= w
