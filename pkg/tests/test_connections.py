import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import base_params, central_reference
from resilient_dmpc.connections import candidate_problem, candidate_set, connection_penalty, decide_connections
from resilient_dmpc.detection import HypothesisState
from resilient_dmpc.model import NetworkTopology, assemble_nominal_problem, build_agents


def hub(n_neighbors, c_hub=10.0, c_other=5.0):
    edges = tuple((1, j) for j in range(2, n_neighbors + 2))
    topo = NetworkTopology(n_neighbors + 1, edges, {e: 100.0 for e in edges}, 0.25)
    prm = {i: base_params(c_G=c_hub if i == 1 else c_other) for i in topo.agents}
    return build_agents(topo, prm)[1]


def state(p_neighbors, n_at):
    p = np.asarray(p_neighbors, dtype=float)
    return HypothesisState(np.concatenate([[1.0 - p.sum()], p]), n_at)


def test_candidate_sets():
    assert candidate_set(2) == [(1, 1), (0, 1), (1, 0)]
    assert candidate_set(1) == [(1,), (0,)]
    assert len(candidate_set(3)) == 4
    with pytest.raises(ValueError):
        candidate_set(0)


def test_penalty_examples():
    h = state([0.5, 0.5], 3)
    assert connection_penalty((1, 1), h, 10.0) == pytest.approx(30.0)
    assert connection_penalty((0, 1), h, 10.0) == pytest.approx(15.0)
    quiet = state([0.15, 0.15], 0)
    for v in candidate_set(2):
        assert connection_penalty(v, quiet, 10.0) == 0.0


def test_no_attacks_keeps_all_connections():
    ag = hub(2)
    d = decide_connections(ag, 0.55, [900.0] * 4, state([0.15, 0.15], 0), 50.0)
    assert d.v == (1, 1)
    assert d.candidate_costs[(1, 1)] <= min(d.candidate_costs.values()) + 1e-9


def test_locked_adversary_is_blocked():
    ag = hub(2)
    d = decide_connections(ag, 0.55, [900.0] * 4, state([0.0, 1.0], 25), 1e8)
    assert d.v == (1, 0)
    assert d.chosen_reason == "block neighbor 3"


def test_single_neighbor_islands():
    ag = hub(1)
    d = decide_connections(ag, 0.55, [900.0] * 4, state([0.5], 40), 1e8)
    assert d.v == (0,)
    plan = d.plans[(0,)]
    assert np.all(plan.reshape(4, -1)[:, 3] == 0.0)


def test_candidates_agree_with_independent_solves():
    ag = hub(3)
    x, fc = 0.5, np.array([700.0, 1100.0, 900.0])
    h = state([0.2, 0.5, 0.1], 2)
    gw = 7.5
    d = decide_connections(ag, x, fc, h, gw)
    base = assemble_nominal_problem(ag, x, fc, 3)
    total = {}
    for v in candidate_set(3):
        prob, _ = candidate_problem(ag, base, v)
        ref, _ = central_reference({1: prob}, [])
        penalty = gw * 2 * sum(p * b * b for p, b in zip([0.2, 0.5, 0.1], v))
        total[v] = prob.cost(ref[1]) + penalty
        assert d.candidate_costs[v] == pytest.approx(total[v], rel=1e-6)
    best = min(total.values())
    assert total[d.v] <= best * (1 + 1e-6)
    assert sum(d.v) >= len(d.v) - 1


def test_reevaluation_follows_state():
    ag = hub(2)
    fc = [900.0] * 4
    early = decide_connections(ag, 0.55, fc, state([0.15, 0.15], 0), 1e8)
    later = decide_connections(ag, 0.55, fc, state([0.9, 0.1], 4), 1e8)
    assert early.v == (1, 1) and later.v == (0, 1)


def test_cache_does_not_change_result():
    ag = hub(2)
    cache = {}
    h = state([0.3, 0.2], 1)
    a = decide_connections(ag, 0.55, [900.0] * 4, h, 100.0, cache=cache)
    b = decide_connections(ag, 0.52, [950.0] * 4, h, 100.0, cache=cache)
    c = decide_connections(ag, 0.52, [950.0] * 4, h, 100.0)
    assert cache and a.v is not None
    assert b.v == c.v
    for v in c.candidate_costs:
        assert b.candidate_costs[v] == pytest.approx(c.candidate_costs[v], rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(p1=st.floats(0.0, 0.5), p2=st.floats(0.0, 0.5), n_at=st.integers(0, 30), extra=st.integers(1, 30),
       gw=st.floats(0.1, 1e4), load=st.floats(300.0, 1400.0))
def test_blocking_pressure_is_monotone(p1, p2, n_at, extra, gw, load):
    ag = hub(2)
    fc = [load] * 3
    a = decide_connections(ag, 0.55, fc, state([p1, p2], n_at), gw)
    b = decide_connections(ag, 0.55, fc, state([p1, p2], n_at + extra), gw)

    def preferred(d):
        ones = d.candidate_costs[(1, 1)]
        return {v for v, c in d.candidate_costs.items() if c < ones}

    assert preferred(a) <= preferred(b)
