"""
What an attack does to storage
==============================

One day on the 8-microgrid network with adversaries that pull extra power
from their neighbors. The plain scheme lets storage run out of bounds;
the tightened scheme keeps a reserve for the worst case.
"""

import warnings

from resilient_dmpc import load_config, run_scenario
from resilient_dmpc.robust import robust_bounds

warnings.simplefilter("ignore")
cfg = load_config()
seed = 3

for strategy in ("nominal", "robust"):
    res = run_scenario(cfg.with_(strategy=strategy), seed, bounds=False)
    low = res.soc.min(axis=0)
    bad = res.regular_violations()
    print(f"{strategy:8s} cost {res.total_cost:.4g}   regular violations {len(bad)}")
    print("   lowest SoC per agent:", " ".join(f"{x:.3f}" for x in low))
    for v in bad[:3]:
        print(f"   step {v.step}: agent {v.agent} {v.kind} ({v.value:.4f} vs {v.limit})")

# tightened storage window for the default parameters
rb = robust_bounds(cfg.params[1], 250.0, -0.00025)
print("storage power window:", rb.storage_window, " SoC window:", rb.soc_window)
