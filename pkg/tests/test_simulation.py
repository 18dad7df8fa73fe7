import numpy as np
import pytest

from oracles import base_params
from resilient_dmpc.config import ScenarioConfig, load_config
from resilient_dmpc.model import N_LOCAL, NetworkTopology, assemble_nominal_problem, build_agents
from resilient_dmpc.robust import tighten_constraints
from resilient_dmpc.simulation import (build_runtime, decoupled_optimum, reconcile_connections, run_scenario,
                                       simulate_plant, suboptimality_bound)

TOPO = NetworkTopology(3, ((1, 2), (2, 3)), {(1, 2): 100.0, (2, 3): 100.0}, 0.25)


@pytest.fixture(scope="module")
def short_resilient():
    return run_scenario(load_config().with_(steps=16), seed=3)


def test_reconcile_examples():
    assert reconcile_connections({1: (0,), 2: (1, 1), 3: (1,)}, TOPO) == {(2, 3)}
    assert reconcile_connections({1: (1,), 2: (1, 1), 3: (1,)}, TOPO) == {(1, 2), (2, 3)}
    assert reconcile_connections({1: (0,), 2: (0, 1), 3: (1,)}, TOPO) == {(2, 3)}


def test_plant_examples():
    prm = base_params()
    x, real = simulate_plant(prm, 0.55, -0.00025, 0.0, 200.0)
    assert x == pytest.approx(0.50) and real == 200.0
    x, _ = simulate_plant(prm, 0.55, -0.00025, 120.0)
    assert x == 0.55 - 0.00025 * 120.0


def single(strategy, d_max=50.0, load_error=True, steps=8):
    topo = NetworkTopology(1, (), {}, 0.25)
    return ScenarioConfig(topo, {1: base_params(d_max=d_max)}, steps=steps, strategy=strategy,
                          profiles={1: "residential"}, peaks={1: 800.0}, load_error=load_error)


def test_single_agent_nominal_is_decoupled_each_step():
    res = run_scenario(single("nominal", load_error=False), seed=0)
    rt = build_runtime(res.config, res.seed)[1]
    x = rt.model.params.x0
    for k in range(res.steps):
        fc = rt.loads.window(k, res.config.h_p)
        u, _ = decoupled_optimum(assemble_nominal_problem(rt.model, x, fc, res.config.h_p))
        np.testing.assert_allclose(res.planned[1][k], u[:N_LOCAL], atol=1e-6)
        x = res.soc[k, 0]


def test_zero_disturbance_robust_equals_nominal():
    a = run_scenario(single("nominal", d_max=0.0), seed=1)
    b = run_scenario(single("robust", d_max=0.0), seed=1)
    assert b.w_max[0] == 0.0
    np.testing.assert_array_equal(a.soc, b.soc)
    np.testing.assert_array_equal(a.stage_costs, b.stage_costs)


def test_identical_agents_trade_nothing():
    edges = ((1, 2), (2, 3), (3, 4), (1, 4))
    topo = NetworkTopology(4, edges, {e: 100.0 for e in edges}, 0.25)
    cfg = ScenarioConfig(topo, {i: base_params() for i in range(1, 5)}, steps=4, strategy="nominal",
                         profiles={i: "industrial" for i in range(1, 5)}, peaks={i: 900.0 for i in range(1, 5)},
                         attacks=False, load_error=False)
    res = run_scenario(cfg, seed=0)
    assert np.abs(res.flows).max() <= 1e-2


def test_links_conserve_power(short_resilient):
    res = short_resilient
    models = build_agents(res.config.topology, res.config.params)
    for (i, j) in res.edges:
        pi, pj = models[i].neighbor_pos(j), models[j].neighbor_pos(i)
        a = res.implemented[i][:, N_LOCAL + pi]
        b = res.implemented[j][:, N_LOCAL + pj]
        np.testing.assert_allclose(a + b, 0.0, atol=1e-9)


def test_locks_are_permanent(short_resilient):
    res = short_resilient
    for i, locks in res.lock_steps.items():
        for j, k0 in locks.items():
            assert j in res.config.adversaries
            e = res.edge_pos(i, j)
            assert not res.active[k0 + 1:, e].any()


def test_first_step_keeps_all_connections(short_resilient):
    assert short_resilient.active[0].all()


def test_resilient_run_is_safe(short_resilient):
    assert short_resilient.regular_violations() == []


def test_bound_is_nonnegative_per_system(short_resilient):
    res = short_resilient
    assert np.all(np.nansum(res.bound, axis=1) >= -1e-6)


def test_isolated_agent_bound_reflects_tightening():
    topo = NetworkTopology(1, (), {}, 0.25)
    ag = build_agents(topo, {1: base_params()})[1]
    relaxed = assemble_nominal_problem(ag, 0.55, [900.0] * 4, 4)
    tight = tighten_constraints(ag, 50.0, relaxed)
    u_star, _ = decoupled_optimum(tight)
    b, u_o, _ = suboptimality_bound(u_star, relaxed)
    assert b >= 0
    assert b == pytest.approx(relaxed.cost(u_star) - relaxed.cost(u_o))
    b0, _, _ = suboptimality_bound(decoupled_optimum(relaxed)[0], relaxed)
    assert b0 == pytest.approx(0.0, abs=1e-6)


def test_same_seed_same_run():
    cfg = load_config().with_(steps=6)
    a = run_scenario(cfg, seed=11, bounds=False)
    b = run_scenario(cfg, seed=11, bounds=False)
    np.testing.assert_array_equal(a.soc, b.soc)
    np.testing.assert_array_equal(a.flows, b.flows)
    np.testing.assert_array_equal(a.attacks, b.attacks)
