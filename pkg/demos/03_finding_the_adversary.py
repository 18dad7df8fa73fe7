"""
Finding the adversary
=====================

Regular agents watch their SoC for deviations larger than the load error
can explain and update beliefs about which neighbor is responsible. Once
a belief reaches certainty the edge is cut for the rest of the day.
"""

import warnings

import numpy as np

from resilient_dmpc import load_config, run_scenario

warnings.simplefilter("ignore")
cfg = load_config()
res = run_scenario(cfg, seed=4, bounds=False)

for i, locks in sorted(res.lock_steps.items()):
    for j, k in locks.items():
        print(f"agent {i} cut neighbor {j} at step {k}")

# agent 1 sees neighbors 2 and 3; belief trajectory for the first 12 steps
post = res.posterior[1]
print("\nstep  P(no adversary)  P(2)    P(3)")
for k in range(12):
    p = post[k]
    print(f"{k:4d}  {p[0]:14.4f}  {p[1]:.4f}  {p[2]:.4f}")

e12 = res.edge_pos(1, 2)
print("\nedge 1-2 active during steps:", np.flatnonzero(res.active[:, e12]).tolist())
print("regular violations:", len(res.regular_violations()))
