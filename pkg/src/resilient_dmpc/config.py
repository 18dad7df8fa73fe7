"""Scenario configuration: YAML parsing, schema validation and defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import jsonschema
import yaml

from .model import ConfigError, MicrogridParams, NetworkTopology, build_agents, build_network
from .robust import feasibility_condition, worst_case_disturbance

STRATEGIES = ("nominal", "robust", "resilient")
DEFAULT_CONFIG = "pge69_8agent.yaml"


def _data_text(name: str) -> str:
    return resources.files("resilient_dmpc").joinpath("data", name).read_text(encoding="utf-8")


def config_schema() -> dict:
    return json.loads(_data_text("config.schema.json"))


def default_config_path() -> Path:
    return Path(str(resources.files("resilient_dmpc").joinpath("data", DEFAULT_CONFIG)))


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a closed-loop run needs besides the random seed."""

    topology: NetworkTopology
    params: Dict[int, MicrogridParams]
    h_p: int = 4
    steps: int = 96
    strategy: str = "resilient"
    adversaries: Tuple[int, ...] = ()
    attack_probability: float = 0.3
    magnitude_fraction: float = 0.5
    assumed_attack_probability: float = 0.3
    lock_tolerance: float = 1e-9
    gamma_step: float = 0.05
    eps: float = 1e-3
    max_iter: int = 5000
    diminishing: bool = False
    gamma_weight: float = 1e8
    profiles: Dict[int, str] = field(default_factory=dict)
    peaks: Dict[int, float] = field(default_factory=dict)
    attacks: bool = True
    load_error: bool = True
    seed: int = 0
    allow_multiple_adversaries: bool = False
    name: str = "scenario"

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    @property
    def regular(self) -> Tuple[int, ...]:
        return tuple(i for i in self.topology.agents if i not in self.adversaries)

    def check(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        agents = set(self.topology.agents)
        unknown = [a for a in self.adversaries if a not in agents]
        if unknown:
            raise ConfigError(f"adversary ids {unknown} are not agents of the network")
        if not self.allow_multiple_adversaries:
            adv = set(self.adversaries)
            for i in self.regular:
                bad = [j for j in self.topology.neighbors(i) if j in adv]
                if len(bad) > 1:
                    raise ConfigError(f"agent {i} has {len(bad)} adversarial neighbors {bad}; at most one allowed")
        for i in self.topology.agents:
            if i not in self.profiles:
                raise ConfigError(f"no load profile assigned to agent {i}")
            if self.peaks.get(i, 0.0) <= 0:
                raise ConfigError(f"agent {i} needs a positive peak load")
        if self.strategy != "nominal":
            for i, ag in build_agents(self.topology, self.params).items():
                w = worst_case_disturbance(ag)
                if not feasibility_condition(ag.params, w, ag.b):
                    raise ConfigError(f"agent {i}: worst-case disturbance {w:g} kW admits no tightened dispatch")


def validate_tree(tree: Mapping[str, Any]) -> None:
    try:
        jsonschema.validate(instance=tree, schema=config_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from None


def config_from_tree(tree: Mapping[str, Any]) -> ScenarioConfig:
    validate_tree(tree)
    topology, params = build_network(tree)
    horizon = tree["horizon"]
    loads = tree.get("loads", {})
    adv = tree.get("adversaries", {})
    det = tree.get("detection", {})
    neg = tree.get("negotiation", {})
    con = tree.get("connections", {})
    scen = tree.get("scenario", {})
    peak = float(loads.get("peak", 800.0))
    peaks = {i: peak for i in topology.agents}
    peaks.update({int(k): float(v) for k, v in (loads.get("peaks") or {}).items()})
    kinds = ("residential", "industrial")
    profiles = {i: kinds[(i - 1) % 2] for i in topology.agents}
    profiles.update({int(k): v for k, v in (loads.get("profiles") or {}).items()})
    cfg = ScenarioConfig(
        topology=topology, params=params,
        h_p=int(horizon.get("h_p", 4)), steps=int(horizon.get("steps", 96)),
        strategy=scen.get("strategy", "resilient"),
        adversaries=tuple(sorted(int(a) for a in adv.get("ids", ()))),
        attack_probability=float(adv.get("attack_probability", 0.3)),
        magnitude_fraction=float(adv.get("magnitude_fraction", 0.5)),
        assumed_attack_probability=float(det.get("assumed_attack_probability", 0.3)),
        lock_tolerance=float(det.get("lock_tolerance", 1e-9)),
        gamma_step=float(neg.get("gamma_step", 0.05)), eps=float(neg.get("eps", 1e-3)),
        max_iter=int(neg.get("max_iter", 5000)), diminishing=bool(neg.get("diminishing", False)),
        gamma_weight=float(con.get("gamma_weight", 1e8)),
        profiles=profiles, peaks=peaks,
        attacks=bool(scen.get("attacks", True)), load_error=bool(scen.get("load_error", True)),
        seed=int(scen.get("seed", 0)),
        allow_multiple_adversaries=bool(adv.get("allow_multiple_per_neighborhood", False)),
        name=str(tree.get("name", "scenario")))
    cfg.check()
    return cfg


def read_tree(path: Union[str, Path, None] = None) -> dict:
    path = default_config_path() if path is None else Path(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from None
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return tree


def load_config(path: Union[str, Path, None] = None, **overrides) -> ScenarioConfig:
    """Parse and validate a YAML scenario file (the shipped default when ``path`` is None)."""
    cfg = config_from_tree(read_tree(path))
    if overrides:
        cfg = cfg.with_(**overrides)
        cfg.check()
    return cfg


def default_tree() -> dict:
    return copy.deepcopy(read_tree(None))
