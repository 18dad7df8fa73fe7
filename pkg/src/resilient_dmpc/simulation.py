"""Closed-loop simulation of the microgrid network.

Three strategies share one step loop:

* ``nominal``: negotiate the untightened problems over every edge.
* ``robust``: tighten storage limits for the worst case over all neighbors.
* ``resilient``: regular agents also test each SoC measurement for attacks,
  update their beliefs about which neighbor is adversarial and may block
  one neighbor; a neighbor whose hypothesis reaches 1 is blocked for good.

Each step runs detect -> update beliefs -> decide connections -> reconcile ->
negotiate -> inject attacks -> evolve plant, in that order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple

import numpy as np

from .central import centralized_solve
from .config import ScenarioConfig
from .connections import decide_connections
from .detection import (AdversaryPolicy, DetectionAnomaly, HypothesisState, bayes_update,
                        detection_residual, detection_threshold, init_priors, inject_attack)
from .loads import generate_loads
from .model import (GEN, IMP, N_LOCAL, ST, AgentModel, HorizonProblem, LoadTrace, NetworkTopology,
                    assemble_nominal_problem, build_agents, stage_cost)
from .negotiation import NegotiationState, active_mask, negotiate
from .qp import ActiveSetSolver, WarmStart
from .robust import tighten_constraints, worst_case_disturbance

Edge = Tuple[int, int]



@dataclass
class AgentRuntime:
    """Mutable per-agent state carried from one sampling instant to the next."""

    model: AgentModel
    loads: LoadTrace
    soc: float
    role: str = "regular"
    policy: Optional[AdversaryPolicy] = None
    hypothesis: Optional[HypothesisState] = None
    locked: Set[int] = field(default_factory=set)
    v: Tuple[int, ...] = ()
    prev_soc: Optional[float] = None
    prev_plan: Optional[np.ndarray] = None
    prev_forecast: Optional[float] = None
    prev_active: Tuple[int, ...] = ()
    decision_cache: Dict[Tuple[int, ...], tuple] = field(default_factory=dict)
    bound_cache: tuple = ()

    @property
    def index(self) -> int:
        return self.model.index

    @property
    def regular(self) -> bool:
        return self.role == "regular"

    def lock(self, j: int) -> None:
        self.locked.add(j)


@dataclass
class Violation:
    step: int
    agent: int
    role: str
    kind: str
    value: float
    limit: float


@dataclass
class ScenarioResult:
    """Time series of one closed-loop run.

    Arrays are indexed ``[step, agent position]`` with agents in ascending
    order. ``soc[k]`` is the SoC reached at the end of step ``k``;
    ``soc_start[k]`` the one measured at its beginning.
    """

    config: ScenarioConfig
    seed: int
    agents: Tuple[int, ...]
    edges: Tuple[Edge, ...]
    roles: Dict[int, str]
    soc_start: np.ndarray
    soc: np.ndarray
    planned: Dict[int, np.ndarray]
    implemented: Dict[int, np.ndarray]
    flows: np.ndarray
    stage_costs: np.ndarray
    horizon_cost: np.ndarray
    bound: np.ndarray
    gap: np.ndarray
    relaxed_cost: np.ndarray
    delta: np.ndarray
    attacked: np.ndarray
    posterior: Dict[int, np.ndarray]
    n_attacks: np.ndarray
    decided: Dict[int, np.ndarray]
    active: np.ndarray
    attacks: np.ndarray
    extra_draw: np.ndarray
    lock_steps: Dict[int, Dict[int, int]]
    iterations: np.ndarray
    converged: np.ndarray
    violations: List[Violation]
    w_max: np.ndarray
    threshold: np.ndarray

    @property
    def steps(self) -> int:
        return self.soc.shape[0]

    @property
    def total_cost(self) -> float:
        return float(self.stage_costs.sum())

    def regular_violations(self) -> List[Violation]:
        return [v for v in self.violations if v.role == "regular"]

    def pos(self, agent: int) -> int:
        return self.agents.index(agent)

    def edge_pos(self, i: int, j: int) -> int:
        return self.edges.index((min(i, j), max(i, j)))


def reconcile_connections(decisions: Mapping[int, Iterable[int]], topology: NetworkTopology) -> Set[Edge]:
    """Edges both ends keep connected (either side can block)."""
    active = set()
    for (i, j) in topology.edges:
        vi = tuple(decisions[i])[topology.neighbors(i).index(j)]
        vj = tuple(decisions[j])[topology.neighbors(j).index(i)]
        if vi == 1 and vj == 1:
            active.add((i, j))
    return active


def simulate_plant(params, soc: float, b: float, p_st: float, w_d: float = 0.0,
                   w_a: float = 0.0) -> Tuple[float, float]:
    """Next SoC and realized storage power when the storage absorbs the disturbances."""
    realized = p_st + w_d + w_a
    return params.a * soc + b * realized, realized


def _plant_violations(k: int, rt: AgentRuntime, realized_st: float, x_next: float,
                      power_tol: float) -> List[Violation]:
    """Limit breaches beyond what the negotiation tolerance alone can cause.

    Agreement stops at residual ``eps``, so the two ends of an edge may
    differ by up to ``eps`` kW and the storage absorbs half of that.
    """
    p = rt.model.params
    soc_tol = abs(rt.model.b) * power_tol
    out = []
    if x_next < p.x_min - soc_tol:
        out.append(Violation(k, rt.index, rt.role, "soc_below_min", x_next, p.x_min))
    if x_next > p.x_max + soc_tol:
        out.append(Violation(k, rt.index, rt.role, "soc_above_max", x_next, p.x_max))
    if realized_st > p.p_dh + power_tol:
        out.append(Violation(k, rt.index, rt.role, "discharge_above_max", realized_st, p.p_dh))
    if realized_st < -p.p_ch - power_tol:
        out.append(Violation(k, rt.index, rt.role, "charge_above_max", realized_st, -p.p_ch))
    return out


def decoupled_optimum(problem: HorizonProblem, working_set: tuple = ()) -> Tuple[np.ndarray, tuple]:
    """Minimizer of an agent's local problem with no coupling and no prices."""
    solver = ActiveSetSolver(problem.to_qp(), cache_size=0)
    sol = solver.solve(warm_start=WarmStart(problem.feasible_point(), working_set))
    if not sol.optimal:
        raise RuntimeError(f"agent {problem.agent.index}: decoupled problem is {sol.status}")
    return sol.u_star, sol.working_set


def suboptimality_bound(u_star: np.ndarray, relaxed: HorizonProblem,
                        working_set: tuple = ()) -> Tuple[float, np.ndarray, tuple]:
    """Horizon cost of ``u_star`` minus the optimum of the relaxed local problem.

    ``relaxed`` is the agent's untightened problem with every transfer free
    within its limit and no coupling. Returns ``(bound, u_o, working_set)``.
    """
    u_o, W = decoupled_optimum(relaxed, working_set)
    return relaxed.cost(u_star) - relaxed.cost(u_o), u_o, W


def _problem_for(rt: AgentRuntime, x: float, forecast: np.ndarray, h_p: int, w_max: float) -> HorizonProblem:
    base = assemble_nominal_problem(rt.model, x, forecast, h_p)
    return tighten_constraints(rt.model, w_max, base) if w_max > 0 else base


def _seed_seq(seed: int, *tags: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), *tags])


def build_runtime(cfg: ScenarioConfig, seed: int) -> Dict[int, AgentRuntime]:
    models = build_agents(cfg.topology, cfg.params)
    runtime = {}
    for i, ag in models.items():
        d = ag.params.d_max if cfg.load_error else 0.0
        trace = generate_loads(cfg.profiles[i], cfg.peaks[i], d, cfg.steps, seed=_seed_seq(seed, 1, i))
        role = "adversarial" if i in cfg.adversaries else "regular"
        policy = None
        if role == "adversarial":
            policy = AdversaryPolicy(i, cfg.attack_probability, cfg.magnitude_fraction, stream=i)
        rt = AgentRuntime(ag, trace, ag.params.x0, role, policy, v=(1,) * len(ag.neighbors))
        if role == "regular" and cfg.strategy == "resilient" and ag.neighbors:
            rt.hypothesis = init_priors(cfg.assumed_attack_probability, len(ag.neighbors),
                                        detection_threshold(ag.params, ag.b))
        runtime[i] = rt
    return runtime


def attack_schedule(cfg: ScenarioConfig, seed: int) -> Dict[int, np.ndarray]:
    """Bernoulli attack events per adversary; independent of the strategy."""
    out = {}
    for a in cfg.adversaries:
        rng = np.random.default_rng(_seed_seq(seed, 2, a))
        draws = rng.random(cfg.steps) < cfg.attack_probability
        out[a] = draws if cfg.attacks else np.zeros(cfg.steps, dtype=bool)
    return out


def run_scenario(cfg: ScenarioConfig, seed: Optional[int] = None, oracle: bool = False,
                 bounds: bool = True) -> ScenarioResult:
    """Simulate ``cfg.steps`` sampling instants and collect the time series.

    ``oracle`` additionally solves the full coupled nominal problem
    centrally at every step to measure the true sub-optimality; agents never
    use it. ``bounds`` toggles the locally computed sub-optimality bound.
    """
    cfg.check()
    seed = cfg.seed if seed is None else int(seed)
    topo = cfg.topology
    agents = topo.agents
    edges = tuple(sorted(topo.edges))
    runtime = build_runtime(cfg, seed)
    schedule = attack_schedule(cfg, seed)
    K, h_p, N = cfg.steps, cfg.h_p, len(agents)
    apos = {i: n for n, i in enumerate(agents)}
    epos = {e: n for n, e in enumerate(edges)}

    nan = np.full((K, N), np.nan)
    res = ScenarioResult(
        config=cfg, seed=seed, agents=agents, edges=edges,
        roles={i: runtime[i].role for i in agents},
        soc_start=np.zeros((K, N)), soc=np.zeros((K, N)),
        planned={i: np.zeros((K, runtime[i].model.dim)) for i in agents},
        implemented={i: np.zeros((K, runtime[i].model.dim)) for i in agents},
        flows=np.zeros((K, len(edges))), stage_costs=np.zeros((K, N)), horizon_cost=np.zeros((K, N)),
        bound=nan.copy(), gap=nan.copy(), relaxed_cost=nan.copy(), delta=nan.copy(),
        attacked=np.zeros((K, N), dtype=bool),
        posterior={i: np.full((K, len(runtime[i].model.neighbors) + 1), np.nan) for i in agents},
        n_attacks=np.zeros((K, N), dtype=int),
        decided={i: np.ones((K, len(runtime[i].model.neighbors)), dtype=int) for i in agents},
        active=np.zeros((K, len(edges)), dtype=bool),
        attacks=np.zeros((K, len(cfg.adversaries)), dtype=bool),
        extra_draw=np.zeros((K, len(edges))), lock_steps={i: {} for i in agents},
        iterations=np.zeros(K, dtype=int), converged=np.zeros(K, dtype=bool),
        violations=[], w_max=np.zeros((K, N)),
        threshold=np.array([detection_threshold(runtime[i].model.params, runtime[i].model.b) for i in agents]))

    state: Optional[NegotiationState] = None
    for k in range(K):
        for i in agents:
            res.soc_start[k, apos[i]] = runtime[i].soc

        # detection and belief update
        for i in agents:
            rt = runtime[i]
            if not rt.regular or rt.prev_plan is None:
                continue
            delta, hit = detection_residual(rt.soc, rt.prev_soc, rt.prev_plan, rt.prev_forecast,
                                            rt.model.params, rt.model.b)
            res.delta[k, apos[i]] = delta
            res.attacked[k, apos[i]] = hit
            if rt.hypothesis is not None:
                before = rt.hypothesis.anomalies
                rt.hypothesis = bayes_update(rt.hypothesis, hit, rt.prev_active, cfg.assumed_attack_probability)
                if rt.hypothesis.anomalies > before:
                    warnings.warn(f"agent {i}, step {k}: attack observed with every neighbor disconnected",
                                  DetectionAnomaly, stacklevel=2)

        # connection decisions
        w_max: Dict[int, float] = {}
        for i in agents:
            rt = runtime[i]
            ones = (1,) * len(rt.model.neighbors)
            if cfg.strategy == "nominal":
                rt.v, w_max[i] = ones, 0.0
            elif cfg.strategy == "robust" or not rt.regular or rt.hypothesis is None:
                rt.v, w_max[i] = ones, worst_case_disturbance(rt.model)
            else:
                pos = rt.hypothesis.identified(cfg.lock_tolerance)
                if pos is not None:
                    j = rt.model.neighbors[pos]
                    if j not in rt.locked:
                        rt.lock(j)
                        res.lock_steps[i][j] = k
                if rt.locked:
                    rt.v = tuple(0 if j in rt.locked else 1 for j in rt.model.neighbors)
                    w_max[i] = rt.model.params.d_max
                else:
                    dec = decide_connections(rt.model, rt.soc, rt.loads.window(k, h_p), rt.hypothesis,
                                             cfg.gamma_weight, h_p, cache=rt.decision_cache)
                    rt.v = dec.v
                    w_max[i] = worst_case_disturbance(rt.model, dec.v)
            res.decided[i][k] = rt.v
            res.w_max[k, apos[i]] = w_max[i]
            if rt.hypothesis is not None:
                res.posterior[i][k] = rt.hypothesis.probs
                res.n_attacks[k, apos[i]] = rt.hypothesis.n_attacks

        active = reconcile_connections({i: runtime[i].v for i in agents}, topo)
        for e in active:
            res.active[k, epos[e]] = True

        # negotiation
        problems = {i: _problem_for(runtime[i], runtime[i].soc, runtime[i].loads.window(k, h_p), h_p, w_max[i])
                    for i in agents}
        if state is None:
            state = NegotiationState.zeros(problems, gamma_step=cfg.gamma_step, eps=cfg.eps,
                                           max_iter=cfg.max_iter, diminishing=cfg.diminishing)
        out = negotiate(problems, active, state=state)
        state = out.state.shifted()
        res.iterations[k] = out.iterations
        res.converged[k] = out.converged
        for i in agents:
            res.horizon_cost[k, apos[i]] = problems[i].cost(out.u[i])

        if bounds or oracle:
            relaxed = {i: assemble_nominal_problem(runtime[i].model, runtime[i].soc,
                                                   runtime[i].loads.window(k, h_p), h_p) for i in agents}
        if bounds:
            for i in agents:
                b, u_o, W = suboptimality_bound(out.u[i], relaxed[i], runtime[i].bound_cache)
                runtime[i].bound_cache = W
                res.bound[k, apos[i]] = b
                res.relaxed_cost[k, apos[i]] = relaxed[i].cost(u_o)
        if oracle:
            central = centralized_solve(relaxed, edges, warm_u=out.u)
            if not central.optimal:
                raise RuntimeError(f"step {k}: centralized reference solve is {central.solution.status}")
            for i in agents:
                res.gap[k, apos[i]] = relaxed[i].cost(out.u[i]) - relaxed[i].cost(central.u[i])

        # implementation: average the two ends of each active edge
        plan = {i: out.u[i][:runtime[i].model.dim].copy() for i in agents}
        flow = {}
        for (i, j) in active:
            pi = runtime[i].model.neighbor_pos(j)
            pj = runtime[j].model.neighbor_pos(i)
            flow[(i, j)] = 0.5 * (plan[i][N_LOCAL + pi] - plan[j][N_LOCAL + pj])
        implemented = {}
        for i in agents:
            u = plan[i].copy()
            for pos, j in enumerate(runtime[i].model.neighbors):
                e = (min(i, j), max(i, j))
                u[N_LOCAL + pos] = (flow[e] if i < j else -flow[e]) if e in active else 0.0
            implemented[i] = u
        for n, a in enumerate(cfg.adversaries):
            if not schedule[a][k]:
                continue
            rt = runtime[a]
            targets = [j for j in rt.model.neighbors
                       if runtime[j].regular and (min(a, j), max(a, j)) in active]
            outcome = inject_attack(rt.policy, implemented[a], rt.model.neighbors, rt.model.p_t_max,
                                    targets, attack=True, pG_min=rt.model.params.pG_min,
                                    p_st_min=-rt.model.params.p_ch)
            res.attacks[k, n] = outcome.attacked
            implemented[a] = outcome.implemented
            for j, draw in outcome.extra_draw.items():
                e = (min(a, j), max(a, j))
                res.extra_draw[k, epos[e]] = draw
                flow[e] += draw if a == e[0] else -draw
                pj = runtime[j].model.neighbor_pos(a)
                implemented[j][N_LOCAL + pj] -= draw
        for e, f in flow.items():
            res.flows[k, epos[e]] = f

        # plant
        for i in agents:
            rt = runtime[i]
            u = implemented[i]
            actual = rt.loads.actual[k % len(rt.loads)]
            forecast = rt.loads.forecast[k % len(rt.loads)]
            # storage covers whatever the other sources do not
            supplied = u[GEN] + u[IMP] + u[N_LOCAL:].sum()
            w_d = actual - forecast
            w_a = (forecast - supplied) - u[ST]
            x_next, realized_st = simulate_plant(rt.model.params, rt.soc, rt.model.b, u[ST], w_d, w_a)
            u[ST] = realized_st
            res.violations.extend(_plant_violations(k, rt, realized_st, x_next, cfg.eps))
            res.planned[i][k] = plan[i]
            res.implemented[i][k] = u
            res.stage_costs[k, apos[i]] = stage_cost(u, rt.model.params)
            res.soc[k, apos[i]] = x_next
            rt.prev_soc, rt.prev_plan, rt.prev_forecast = rt.soc, plan[i], forecast
            rt.prev_active = active_mask(problems[i], active)
            rt.soc = x_next
    return res
