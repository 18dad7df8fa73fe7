"""
Two microgrids trading power
============================

A cheap and an expensive microgrid agree on transfers through price
negotiation; the result is compared with solving both at once.
"""

from dataclasses import replace

import numpy as np

from resilient_dmpc import NetworkTopology, assemble_nominal_problem, build_agents, load_config
from resilient_dmpc import centralized_solve, negotiate

# borrow one agent's parameters from the packaged network and vary the fuel cost
base = load_config().params[1]
cheap = replace(base, c_G=5.0)
pricey = replace(base, c_G=10.0)

topo = NetworkTopology(2, ((1, 2),), {(1, 2): 100.0}, 0.25)
agents = build_agents(topo, {1: cheap, 2: pricey})

h_p = 4
problems = {i: assemble_nominal_problem(agents[i], 0.55, [700.0] * h_p, h_p) for i in agents}

result = negotiate(problems, topo.edges)
print("converged:", result.converged, "after", result.iterations, "rounds")

# columns: storage, generation, import, transfer received from the neighbor
for i in (1, 2):
    print(f"agent {i} plan (kW):")
    print(np.round(result.u[i].reshape(h_p, -1), 2))

central = centralized_solve(problems, topo.edges)
gap = max(np.abs(result.u[i] - central.u[i]).max() for i in agents)
print(f"largest difference to the joint solve: {gap:.3g} kW")
