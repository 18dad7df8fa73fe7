"""Command line entry point: ``simulate``, ``compare`` and ``validate``."""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

from .config import STRATEGIES, load_config
from .detection import DetectionAnomaly
from .experiment import run_experiment, write_summary_csv, write_timeseries_csv
from .model import ConfigError
from .robust import TighteningError
from .simulation import run_scenario


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="resilient-dmpc",
                                 description="Distributed MPC of networked microgrids with adversarial neighbors.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sim = sub.add_parser("simulate", help="run one closed-loop day and write time-series CSVs")
    sim.add_argument("--config", required=True, type=Path, help="scenario YAML file")
    sim.add_argument("--seed", type=int, default=None, help="random seed (default: from config)")
    sim.add_argument("--out", required=True, type=Path, help="output directory")
    sim.add_argument("--strategy", choices=STRATEGIES, default=None, help="override the configured strategy")
    sim.add_argument("--no-attacks", action="store_true", help="adversaries follow the negotiated plan")
    sim.add_argument("--no-load-error", action="store_true", help="actual loads equal the forecasts")
    sim.add_argument("--oracle", action="store_true", help="also measure the gap to the centralized optimum")

    cmp_ = sub.add_parser("compare", help="run scenarios 1-4 on one seed and write a summary")
    cmp_.add_argument("--config", required=True, type=Path)
    cmp_.add_argument("--seed", type=int, default=None)
    cmp_.add_argument("--out", required=True, type=Path)
    cmp_.add_argument("--no-oracle", action="store_true", help="skip the centralized gap measurement")

    val = sub.add_parser("validate", help="check a scenario file and its feasibility gate")
    val.add_argument("--config", required=True, type=Path)
    return ap


def _simulate(args) -> int:
    cfg = load_config(args.config)
    changes = {}
    if args.strategy:
        changes["strategy"] = args.strategy
    if args.no_attacks:
        changes["attacks"] = False
    if args.no_load_error:
        changes["load_error"] = False
    if changes:
        cfg = cfg.with_(**changes)
    res = run_scenario(cfg, args.seed, oracle=args.oracle)
    write_timeseries_csv(res, args.out)
    bad = res.regular_violations()
    print(f"{cfg.name}: strategy={cfg.strategy} seed={res.seed} steps={res.steps} "
          f"cost={res.total_cost:.6g} regular_violations={len(bad)} "
          f"non_converged_steps={int((~res.converged).sum())}")
    for i, locks in sorted(res.lock_steps.items()):
        for j, k in sorted(locks.items()):
            print(f"agent {i} locked neighbor {j} at step {k}")
    return 0


def _compare(args) -> int:
    cfg = load_config(args.config)
    summary = run_experiment(cfg, args.seed, oracle=not args.no_oracle)
    args.out.mkdir(parents=True, exist_ok=True)
    write_summary_csv(summary, args.out / "summary.csv")
    for n, res in summary.results.items():
        write_timeseries_csv(res, args.out / f"scenario_{n}")
    print(f"{cfg.name}: seed={summary.seed}")
    print(summary.table())
    return 0


def _validate(args) -> int:
    cfg = load_config(args.config)
    for strategy in ("robust", "resilient"):
        cfg.with_(strategy=strategy).check()
    print(f"{cfg.name}: ok ({len(cfg.topology.agents)} agents, {len(cfg.topology.edges)} edges, "
          f"adversaries {list(cfg.adversaries)}, {cfg.steps} steps)")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"simulate": _simulate, "compare": _compare, "validate": _validate}[args.command]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", DetectionAnomaly)
            return handler(args)
    except (ConfigError, TighteningError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

