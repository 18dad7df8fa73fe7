"""Choosing which neighbor, if any, a regular agent disconnects.

The decision minimizes local dispatch cost plus a penalty on keeping
connections to suspected neighbors. At most one neighbor may be blocked, so
the problem is solved by enumerating the ``|N_i| + 1`` candidate vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .detection import HypothesisState
from .model import AgentModel, HorizonProblem, assemble_nominal_problem
from .qp import ActiveSetSolver, WarmStart
from .robust import TighteningError, tighten_constraints, worst_case_disturbance


class NoFeasibleConnection(RuntimeError):
    """No candidate connection vector admits a feasible dispatch."""


@dataclass
class ConnectionDecision:
    v: Tuple[int, ...]
    candidate_costs: Dict[Tuple[int, ...], float]
    dispatch_costs: Dict[Tuple[int, ...], float] = field(default_factory=dict)
    chosen_reason: str = ""
    plans: Dict[Tuple[int, ...], np.ndarray] = field(default_factory=dict)


def candidate_set(n_neighbors: int) -> List[Tuple[int, ...]]:
    """All-ones first, then the vectors with a single zero, zero position ascending."""
    if n_neighbors < 1:
        raise ValueError("n_neighbors must be at least 1")
    ones = (1,) * n_neighbors
    return [ones] + [tuple(0 if k == j else 1 for k in range(n_neighbors)) for j in range(n_neighbors)]


def connection_penalty(v, h: HypothesisState, gamma_weight: float) -> float:
    v = np.asarray(v, dtype=float)
    return float(gamma_weight * h.n_attacks * np.sum(h.p_neighbors * v * v))


def candidate_problem(agent: AgentModel, base: HorizonProblem, v: Tuple[int, ...]) -> Tuple[HorizonProblem, float]:
    w = worst_case_disturbance(agent, v)
    return tighten_constraints(agent, w, base).with_transfer_mask(v), w


def decide_connections(agent: AgentModel, x_measured: float, forecast: np.ndarray,
                       h: HypothesisState, gamma_weight: float, h_p: Optional[int] = None,
                       tie_rtol: float = 1e-9, tol: float = 1e-8,
                       cache: Optional[Dict[Tuple[int, ...], tuple]] = None) -> ConnectionDecision:
    """Enumerate the candidate connection vectors and return the cheapest.

    Each candidate's dispatch cost is the optimum of the agent's local,
    uncoupled problem with storage limits tightened for that candidate's
    worst-case disturbance and transfers to blocked neighbors fixed at 0.
    Near-ties (within ``tie_rtol`` relative) go to the earlier candidate,
    which prefers all-ones and then the lowest blocked position.

    ``cache`` (optional, per agent) keeps each candidate's last optimal
    working set to warm-start the next call; it never changes the result.
    """
    h_p = len(forecast) if h_p is None else h_p
    base = assemble_nominal_problem(agent, x_measured, forecast, h_p)
    costs: Dict[Tuple[int, ...], float] = {}
    dispatch: Dict[Tuple[int, ...], float] = {}
    plans = {}
    for v in candidate_set(len(agent.neighbors)):
        try:
            prob, _ = candidate_problem(agent, base, v)
        except TighteningError:
            continue
        start = WarmStart(prob.feasible_point(), cache.get(v, ()) if cache is not None else ())
        sol = ActiveSetSolver(prob.to_qp(), tol=tol, cache_size=0).solve(warm_start=start)
        if not sol.optimal:
            continue
        if cache is not None:
            cache[v] = sol.working_set
        dispatch[v] = prob.cost(prob.snap_fixed(sol.u_star.copy()))
        costs[v] = dispatch[v] + connection_penalty(v, h, gamma_weight)
        plans[v] = prob.snap_fixed(sol.u_star.copy())
    if not costs:
        raise NoFeasibleConnection(f"agent {agent.index}: no feasible connection candidate")
    best = None
    for v, c in costs.items():
        if best is None or c < costs[best] - tie_rtol * max(1.0, abs(costs[best])):
            best = v
    blocked = [agent.neighbors[k] for k, x in enumerate(best) if not x]
    reason = "keep all connections" if not blocked else f"block neighbor {blocked[0]}"
    return ConnectionDecision(best, costs, dispatch, reason, plans)
