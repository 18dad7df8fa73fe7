"""Four-scenario comparison and CSV export of closed-loop runs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .config import ScenarioConfig
from .simulation import ScenarioResult, run_scenario

# scenario number -> (label, config changes)
SCENARIOS: Dict[int, tuple] = {
    1: ("nominal, no attacks", dict(strategy="nominal", attacks=False, load_error=False)),
    2: ("nominal", dict(strategy="nominal", attacks=True, load_error=True)),
    3: ("robust", dict(strategy="robust", attacks=True, load_error=True)),
    4: ("resilient", dict(strategy="resilient", attacks=True, load_error=True)),
}

SOC_HEADER = ("step", "agent", "soc", "x_min", "x_max")
DETECTION_HEADER = ("step", "agent", "delta", "threshold", "attacked", "n_attacks", "hypothesis", "posterior")
CONNECTION_HEADER = ("step", "agent", "neighbor", "v", "locked", "edge_active")
TRANSFER_HEADER = ("step", "edge", "i", "j", "p_t_ij", "extra_draw")
COST_HEADER = ("step", "agent", "stage_cost", "bound", "gap")
SUMMARY_HEADER = ("scenario", "strategy", "attacks_load_error", "cost", "normalized_cost",
                  "regular_violations", "constraints_satisfied", "bound_ratio", "gap_ratio")


def fmt(x) -> str:
    """Decimal text with 12 significant digits; empty for missing values."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return "%.12g" % x


def scenario_config(base: ScenarioConfig, number: int) -> ScenarioConfig:
    try:
        _, changes = SCENARIOS[number]
    except KeyError:
        raise ValueError(f"unknown scenario {number}; expected one of {sorted(SCENARIOS)}") from None
    return base.with_(**changes)


@dataclass
class ScenarioRow:
    scenario: int
    strategy: str
    disturbed: bool
    cost: float
    normalized: float
    violations: int
    bound_ratio: float
    gap_ratio: float

    @property
    def satisfied(self) -> bool:
        return self.violations == 0


@dataclass
class ExperimentSummary:
    seed: int
    rows: List[ScenarioRow]
    results: Dict[int, ScenarioResult]

    def row(self, scenario: int) -> ScenarioRow:
        return next(r for r in self.rows if r.scenario == scenario)

    def table(self) -> str:
        lines = ["scenario  strategy   disturbed  cost(norm)  constraints  bound   gap"]
        for r in self.rows:
            bound = "" if math.isnan(r.bound_ratio) else f"{100 * r.bound_ratio:5.1f}%"
            gap = "" if math.isnan(r.gap_ratio) else f"{100 * r.gap_ratio:5.1f}%"
            lines.append(f"{r.scenario:>8}  {r.strategy:<9}  {'yes' if r.disturbed else 'no':<9}  "
                         f"{r.normalized:10.4f}  {'yes' if r.satisfied else 'no':<11}  {bound:>6} {gap:>6}")
        return "\n".join(lines)


def suboptimality_ratios(res: ScenarioResult, baseline: ScenarioResult) -> tuple:
    """Average network bound and measured gap per step, each relative to the
    average planned horizon cost of ``baseline`` (the undisturbed nominal run)."""
    ref = float(np.mean(baseline.horizon_cost.sum(axis=1)))
    if np.isnan(res.bound).any() or ref <= 0:
        return math.nan, math.nan
    bound = float(np.mean(res.bound.sum(axis=1))) / ref
    gap = math.nan if np.isnan(res.gap).any() else float(np.mean(res.gap.sum(axis=1))) / ref
    return bound, gap


def run_experiment(config: ScenarioConfig, seed: Optional[int] = None,
                   scenarios: Sequence[int] = (1, 2, 3, 4), oracle: bool = True,
                   bounds: bool = True) -> ExperimentSummary:
    """Run the requested scenarios on one seed and normalize by scenario 1.

    Scenario 1 is always simulated since it defines the cost unit. The
    centralized reference (``oracle``) and the local bounds are only
    computed for the resilient scenario.
    """
    seed = config.seed if seed is None else int(seed)
    wanted = sorted(set(scenarios) | {1})
    results = {}
    for n in wanted:
        cfg = scenario_config(config, n)
        tracked = cfg.strategy == "resilient"
        results[n] = run_scenario(cfg, seed, oracle=oracle and tracked, bounds=bounds and tracked)
    base = results[1].total_cost
    rows = []
    for n in wanted:
        if n not in scenarios:
            continue
        r = results[n]
        b, g = suboptimality_ratios(r, results[1])
        rows.append(ScenarioRow(n, r.config.strategy, r.config.attacks or r.config.load_error,
                                r.total_cost, r.total_cost / base, len(r.regular_violations()), b, g))
    return ExperimentSummary(seed, rows, {n: results[n] for n in wanted if n in scenarios})


def _write(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if not isinstance(x, str) else x for x in row])


def _soc_rows(res: ScenarioResult):
    params = res.config.params
    for k in range(res.steps):
        for n, i in enumerate(res.agents):
            yield (k, i, res.soc[k, n], params[i].x_min, params[i].x_max)


def _detection_rows(res: ScenarioResult):
    topo = res.config.topology
    for k in range(res.steps):
        for n, i in enumerate(res.agents):
            if res.roles[i] != "regular":
                continue
            head = (k, i, res.delta[k, n], res.threshold[n], res.attacked[k, n], res.n_attacks[k, n])
            post = res.posterior[i][k]
            if np.isnan(post).all():
                yield head + ("", math.nan)
                continue
            yield head + ("none", post[0])
            for j, p in zip(topo.neighbors(i), post[1:]):
                yield head + (str(j), p)


def _connection_rows(res: ScenarioResult):
    topo = res.config.topology
    for k in range(res.steps):
        for i in res.agents:
            for pos, j in enumerate(topo.neighbors(i)):
                locked = i in res.lock_steps and j in res.lock_steps[i] and res.lock_steps[i][j] <= k
                yield (k, i, j, res.decided[i][k, pos], locked, res.active[k, res.edge_pos(i, j)])


def _transfer_rows(res: ScenarioResult):
    for k in range(res.steps):
        for n, (i, j) in enumerate(res.edges):
            yield (k, f"{i}-{j}", i, j, res.flows[k, n], res.extra_draw[k, n])


def _cost_rows(res: ScenarioResult):
    for k in range(res.steps):
        for n, i in enumerate(res.agents):
            yield (k, i, res.stage_costs[k, n], res.bound[k, n], res.gap[k, n])


def write_timeseries_csv(result: ScenarioResult, out_dir: Union[str, Path]) -> List[Path]:
    """Write soc, detections, connections, transfers and costs CSVs into ``out_dir``.

    ``p_t_ij`` in transfers.csv is the power agent ``i`` receives from ``j``
    after attacks; agent ``j`` receives its negative.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [
        ("soc.csv", SOC_HEADER, _soc_rows(result)),
        ("detections.csv", DETECTION_HEADER, _detection_rows(result)),
        ("connections.csv", CONNECTION_HEADER, _connection_rows(result)),
        ("transfers.csv", TRANSFER_HEADER, _transfer_rows(result)),
        ("costs.csv", COST_HEADER, _cost_rows(result)),
    ]
    paths = []
    for name, header, rows in files:
        _write(out / name, header, rows)
        paths.append(out / name)
    return paths


def write_summary_csv(summary: ExperimentSummary, path: Union[str, Path]) -> Path:
    rows = [(r.scenario, r.strategy, "yes" if r.disturbed else "no", r.cost, r.normalized, r.violations,
             "yes" if r.satisfied else "no", r.bound_ratio, r.gap_ratio) for r in summary.rows]
    _write(Path(path), SUMMARY_HEADER, rows)
    return Path(path)
