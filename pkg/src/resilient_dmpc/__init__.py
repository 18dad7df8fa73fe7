"""Resilient distributed MPC for networked microgrids with adversarial agents."""

from .central import centralized_solve
from .config import ScenarioConfig, load_config
from .connections import decide_connections
from .detection import bayes_update, detection_residual, init_priors, inject_attack
from .experiment import run_experiment, write_timeseries_csv
from .loads import generate_loads
from .model import (AgentModel, ConfigError, HorizonProblem, LoadTrace, MicrogridParams, NetworkTopology,
                    assemble_nominal_problem, build_agents, build_network)
from .negotiation import negotiate
from .qp import QpProblem, QpSolution, check_kkt, solve_qp
from .robust import feasibility_condition, tighten_constraints, worst_case_disturbance
from .simulation import ScenarioResult, reconcile_connections, run_scenario, simulate_plant

__all__ = [
    "AgentModel", "ConfigError", "HorizonProblem", "LoadTrace", "MicrogridParams", "NetworkTopology",
    "QpProblem", "QpSolution", "ScenarioConfig", "ScenarioResult",
    "assemble_nominal_problem", "bayes_update", "build_agents", "build_network", "centralized_solve",
    "check_kkt", "decide_connections", "detection_residual", "feasibility_condition", "generate_loads",
    "init_priors", "inject_attack", "load_config", "negotiate", "reconcile_connections", "run_experiment",
    "run_scenario", "simulate_plant", "solve_qp", "tighten_constraints", "worst_case_disturbance",
    "write_timeseries_csv",
]
