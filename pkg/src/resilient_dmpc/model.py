"""Physical and economic model of a network of microgrids.

Each agent ``i`` decides, at every step of its prediction horizon, the vector

    u = (p_st, p_G, p_im, p_t[j] for j in neighbors(i))

where ``p_st`` is storage power (positive when discharging), ``p_G`` local
generation, ``p_im`` import from the main grid and ``p_t[j]`` the power that
neighbor ``j`` delivers to ``i``. Neighbors are always ordered by ascending
agent index. The state-of-charge is eliminated from the decision vector by
forward substitution of the storage dynamics ``x+ = a x + b p_st`` with
``b = -T_s / e_cap``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .qp import QpProblem

N_LOCAL = 3  # p_st, p_G, p_im
ST, GEN, IMP = 0, 1, 2


class ConfigError(ValueError):
    """Invalid scenario description or parameter set."""


@dataclass(frozen=True)
class MicrogridParams:
    x_min: float
    x_max: float
    x0: float
    p_ch: float
    p_dh: float
    pG_min: float
    pG_max: float
    p_im_max: float
    e_cap: float
    a: float
    c_st: float
    c_G: float
    c_im: float
    c_t: float
    d_max: float

    def validate(self, label: str = "agent") -> None:
        if self.x_min > self.x_max:
            raise ConfigError(f"{label}: SoC bounds inverted (x_min={self.x_min} > x_max={self.x_max})")
        if not (0.0 <= self.x_min and self.x_max <= 1.0):
            raise ConfigError(f"{label}: SoC bounds must lie in [0, 1]")
        if not (self.x_min <= self.x0 <= self.x_max):
            raise ConfigError(f"{label}: initial SoC {self.x0} outside [{self.x_min}, {self.x_max}]")
        for name in ("p_ch", "p_dh", "pG_max", "p_im_max", "d_max", "pG_min"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{label}: {name} must be nonnegative")
        if self.e_cap <= 0:
            raise ConfigError(f"{label}: e_cap must be positive")
        if self.pG_min > self.pG_max:
            raise ConfigError(f"{label}: pG_min exceeds pG_max")
        if not (0.0 < self.a <= 1.0):
            raise ConfigError(f"{label}: storage efficiency a must lie in (0, 1]")
        for name in ("c_st", "c_G", "c_im", "c_t"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{label}: cost weight {name} must be positive")
        if self.c_t >= min(self.c_st, self.c_G, self.c_im):
            warnings.warn(f"{label}: transfer weight c_t is not the smallest cost weight",
                          stacklevel=2)

    def storage_gain(self, sampling_time: float) -> float:
        return -sampling_time / self.e_cap


@dataclass(frozen=True)
class NetworkTopology:
    n_agents: int
    edges: Tuple[Tuple[int, int], ...]
    p_t_max: Mapping[Tuple[int, int], float]
    sampling_time: float

    def __post_init__(self):
        canon = []
        limits = {}
        for (i, j) in self.edges:
            if i == j:
                raise ConfigError(f"self-loop on agent {i}")
            for k in (i, j):
                if not 1 <= k <= self.n_agents:
                    raise ConfigError(f"edge ({i}, {j}) references unknown agent {k}")
            e = (min(i, j), max(i, j))
            if e in limits:
                raise ConfigError(f"duplicate edge {e}")
            fwd = self.p_t_max.get((i, j))
            bwd = self.p_t_max.get((j, i))
            if fwd is not None and bwd is not None and fwd != bwd:
                raise ConfigError(f"asymmetric transfer limit on edge {e}")
            lim = fwd if fwd is not None else bwd
            if lim is None or lim <= 0:
                raise ConfigError(f"edge {e} needs a positive transfer limit")
            limits[e] = float(lim)
            canon.append(e)
        if self.sampling_time <= 0:
            raise ConfigError("sampling_time must be positive")
        object.__setattr__(self, "edges", tuple(sorted(canon)))
        object.__setattr__(self, "p_t_max", limits)

    def neighbors(self, i: int) -> Tuple[int, ...]:
        out = [j for (a, b) in self.edges for j in ((b,) if a == i else (a,) if b == i else ())]
        return tuple(sorted(out))

    def limit(self, i: int, j: int) -> float:
        return self.p_t_max[(min(i, j), max(i, j))]

    @property
    def agents(self) -> Tuple[int, ...]:
        return tuple(range(1, self.n_agents + 1))


@dataclass(frozen=True)
class AgentModel:
    """One agent's parameters together with its place in the network."""

    index: int
    params: MicrogridParams
    neighbors: Tuple[int, ...]
    p_t_max: Tuple[float, ...]
    sampling_time: float

    @property
    def b(self) -> float:
        return self.params.storage_gain(self.sampling_time)

    @property
    def dim(self) -> int:
        return N_LOCAL + len(self.neighbors)

    def neighbor_pos(self, j: int) -> int:
        return self.neighbors.index(j)

    def weights(self) -> np.ndarray:
        p = self.params
        return np.concatenate([[p.c_st, p.c_G, p.c_im], np.full(len(self.neighbors), p.c_t)])


@dataclass
class ControlInput:
    p_st: float
    p_G: float
    p_im: float
    p_t_from: Dict[int, float] = field(default_factory=dict)

    def to_vector(self, neighbors: Optional[Sequence[int]] = None) -> np.ndarray:
        order = sorted(self.p_t_from) if neighbors is None else list(neighbors)
        return np.array([self.p_st, self.p_G, self.p_im] + [self.p_t_from[j] for j in order])

    @classmethod
    def from_vector(cls, u: Sequence[float], neighbors: Sequence[int]) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        if u.size != N_LOCAL + len(neighbors):
            raise ValueError(f"control vector has {u.size} entries, expected {N_LOCAL + len(neighbors)}")
        return cls(float(u[ST]), float(u[GEN]), float(u[IMP]),
                   {j: float(u[N_LOCAL + k]) for k, j in enumerate(neighbors)})


@dataclass(frozen=True)
class LoadTrace:
    forecast: np.ndarray
    actual: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.forecast, dtype=float)
        a = np.asarray(self.actual, dtype=float)
        if f.shape != a.shape:
            raise ValueError("forecast and actual load must have equal length")
        object.__setattr__(self, "forecast", f)
        object.__setattr__(self, "actual", a)

    def __len__(self) -> int:
        return self.forecast.size

    def window(self, k: int, h_p: int) -> np.ndarray:
        """Forecast for steps k..k+h_p-1, wrapping around the end of the trace."""
        idx = (k + np.arange(h_p)) % self.forecast.size
        return self.forecast[idx]

    def max_error(self) -> float:
        return float(np.max(np.abs(self.actual - self.forecast), initial=0.0))


def stage_cost(u, params: MicrogridParams) -> float:
    """Quadratic stage cost ``u' R u`` with ``R = diag(c_st, c_G, c_im, c_t, ...)``."""
    if isinstance(u, ControlInput):
        u = u.to_vector()
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size < N_LOCAL:
        raise ValueError(f"control vector needs at least {N_LOCAL} entries")
    w = np.concatenate([[params.c_st, params.c_G, params.c_im], np.full(u.size - N_LOCAL, params.c_t)])
    return float(np.sum(w * u * u))


@dataclass
class HorizonProblem:
    """Box-and-SoC constrained dispatch problem of one agent over ``h_p`` steps.

    Decision vector entry ``l * m + k`` holds component ``k`` of the input at
    horizon step ``l`` (``m = 3 + |N_i|``). ``soc_lo[l]``/``soc_hi[l]`` bound
    the SoC reached after applying the input of step ``l``.
    """

    agent: AgentModel
    h_p: int
    x0: float
    forecast: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    soc_lo: np.ndarray
    soc_hi: np.ndarray

    @property
    def m(self) -> int:
        return self.agent.dim

    @property
    def n(self) -> int:
        return self.h_p * self.m

    def idx(self, step: int, comp: int) -> int:
        return step * self.m + comp

    def transfer_index(self, step: int, pos: int) -> int:
        return step * self.m + N_LOCAL + pos

    def transfer_indices(self, pos: int) -> np.ndarray:
        return np.arange(self.h_p) * self.m + N_LOCAL + pos

    def weights(self) -> np.ndarray:
        return np.tile(self.agent.weights(), self.h_p)

    def copy(self) -> "HorizonProblem":
        return replace(self, forecast=self.forecast.copy(), lb=self.lb.copy(), ub=self.ub.copy(),
                       soc_lo=self.soc_lo.copy(), soc_hi=self.soc_hi.copy())

    def with_transfer_mask(self, v: Sequence[int]) -> "HorizonProblem":
        """Copy with transfers bounded by ``p_t_max * v`` (blocked edges pinned to 0)."""
        v = np.asarray(v)
        if v.size != len(self.agent.neighbors):
            raise ValueError("connection vector does not match the neighbor list")
        out = self.copy()
        for pos, vj in enumerate(v):
            if not vj:
                ix = self.transfer_indices(pos)
                out.lb[ix] = 0.0
                out.ub[ix] = 0.0
        return out

    def snap_fixed(self, u: np.ndarray) -> np.ndarray:
        """Set entries whose bounds coincide to that value, in place (drops solver round-off)."""
        fixed = self.lb == self.ub
        u[fixed] = self.lb[fixed]
        return u

    def cost(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float)
        return float(np.sum(self.weights() * u * u))

    def step_costs(self, u: np.ndarray) -> np.ndarray:
        w = self.agent.weights()
        U = np.asarray(u, dtype=float).reshape(self.h_p, self.m)
        return np.sum(w * U * U, axis=1)

    def _soc_map(self) -> Tuple[np.ndarray, np.ndarray]:
        """Affine map ``x[l] = free[l] + S[l] @ u`` for the SoC after step ``l``."""
        a, b = self.agent.params.a, self.agent.b
        S = np.zeros((self.h_p, self.n))
        for l in range(self.h_p):
            for q in range(l + 1):
                S[l, self.idx(q, ST)] = b * a ** (l - q)
        free = self.x0 * a ** (np.arange(self.h_p) + 1)
        return free, S

    def soc_trajectory(self, u: np.ndarray) -> np.ndarray:
        free, S = self._soc_map()
        return free + S @ np.asarray(u, dtype=float)

    def balance_matrix(self) -> np.ndarray:
        E = np.zeros((self.h_p, self.n))
        for l in range(self.h_p):
            E[l, l * self.m:(l + 1) * self.m] = 1.0
        return E

    def power_balance_residual(self, u: np.ndarray) -> np.ndarray:
        """``forecast - p_G - p_st - p_im - sum p_t`` at each horizon step."""
        U = np.asarray(u, dtype=float).reshape(self.h_p, self.m)
        return self.forecast - U.sum(axis=1)

    def reachable_soc_window(self) -> Tuple[np.ndarray, np.ndarray]:
        """SoC bounds relaxed just enough to be reachable from ``x0``.

        If the measured SoC lies outside the (possibly tightened) window, the
        first steps cannot return inside it; each bound is then moved to the
        closest SoC reachable with extreme storage action. Inside the window
        this is the identity.
        """
        free, S = self._soc_map()
        st = np.array([self.idx(l, ST) for l in range(self.h_p)])
        lo_u = np.zeros(self.n)
        hi_u = np.zeros(self.n)
        lo_u[st] = self.lb[st]
        hi_u[st] = self.ub[st]
        # b < 0: charging (lower p_st) raises the SoC
        highest = free + np.where(S < 0, S * lo_u, S * hi_u).sum(axis=1)
        lowest = free + np.where(S < 0, S * hi_u, S * lo_u).sum(axis=1)
        return np.minimum(self.soc_lo, highest), np.maximum(self.soc_hi, lowest)

    def feasible_point(self) -> np.ndarray:
        """Cheap feasible plan (no transfers) used to warm-start solvers.

        Storage steers the SoC toward the middle of its window, generation
        covers the rest of the forecast and import makes up any shortfall.
        The result may violate some bound in corner cases; solvers verify it.
        """
        a, b = self.agent.params.a, self.agent.b
        lo_w, hi_w = self.reachable_soc_window()
        u = np.clip(np.zeros(self.n), self.lb, self.ub)
        x = self.x0
        for l in range(self.h_p):
            st = self.idx(l, ST)
            gen = self.idx(l, GEN)
            imp = self.idx(l, IMP)
            transfers = u[l * self.m + N_LOCAL:(l + 1) * self.m].sum()
            net = self.forecast[l] - transfers
            # storage range keeping the next SoC in the window and the
            # remainder coverable by generation plus import
            lo = max(self.lb[st], (hi_w[l] - a * x) / b, net - self.ub[gen] - self.ub[imp])
            hi = min(self.ub[st], (lo_w[l] - a * x) / b, net - self.lb[gen] - self.lb[imp])
            target = (0.5 * (lo_w[l] + hi_w[l]) - a * x) / b
            p_st = float(np.clip(target, lo, hi)) if lo <= hi else float(np.clip(target, self.lb[st], self.ub[st]))
            x = a * x + b * p_st
            u[st] = p_st
            rest = net - p_st
            u[gen] = float(np.clip(rest, self.lb[gen], self.ub[gen]))
            u[imp] = rest - u[gen]
        return u

    def to_qp(self, g: Optional[np.ndarray] = None) -> QpProblem:
        """Standard-form QP with cost ``u' R u`` (so ``H = 2R``)."""
        n = self.n
        H = np.diag(2.0 * self.weights())
        A_rows: List[np.ndarray] = []
        b_rows: List[float] = []
        E_rows: List[np.ndarray] = [self.balance_matrix()]
        d_rows: List[np.ndarray] = [self.forecast.astype(float)]
        eye = np.eye(n)
        for k in range(n):
            lo, hi = self.lb[k], self.ub[k]
            if lo == hi:
                E_rows.append(eye[k:k + 1])
                d_rows.append(np.array([lo]))
                continue
            if np.isfinite(hi):
                A_rows.append(eye[k])
                b_rows.append(hi)
            if np.isfinite(lo):
                A_rows.append(-eye[k])
                b_rows.append(-lo)
        free, S = self._soc_map()
        soc_lo, soc_hi = self.reachable_soc_window()
        for l in range(self.h_p):
            A_rows.append(S[l])
            b_rows.append(soc_hi[l] - free[l])
            A_rows.append(-S[l])
            b_rows.append(free[l] - soc_lo[l])
        return QpProblem(H, np.zeros(n) if g is None else g,
                         np.array(A_rows), np.array(b_rows),
                         np.vstack(E_rows), np.concatenate(d_rows))

    def is_feasible(self, u: np.ndarray, tol: float = 1e-6) -> bool:
        u = np.asarray(u, dtype=float)
        if np.any(u < self.lb - tol) or np.any(u > self.ub + tol):
            return False
        if np.max(np.abs(self.power_balance_residual(u))) > tol:
            return False
        x = self.soc_trajectory(u)
        lo, hi = self.reachable_soc_window()
        return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))


def build_agents(topology: NetworkTopology, params: Mapping[int, MicrogridParams]) -> Dict[int, AgentModel]:
    agents = {}
    for i in topology.agents:
        if i not in params:
            raise ConfigError(f"missing parameters for agent {i}")
        params[i].validate(f"agent {i}")
        nb = topology.neighbors(i)
        agents[i] = AgentModel(i, params[i], nb, tuple(topology.limit(i, j) for j in nb),
                               topology.sampling_time)
    return agents


def build_network(config: Mapping) -> Tuple[NetworkTopology, Dict[int, MicrogridParams]]:
    """Topology and per-agent parameters from a parsed configuration tree.

    ``config`` needs ``topology`` (``n_agents``, ``edges``, ``p_t_max`` as a
    scalar or a per-edge list), ``horizon`` (``sampling_time``) and
    ``agents``: a ``defaults`` mapping plus optional per-agent overrides.
    """
    try:
        topo_cfg = config["topology"]
        n = int(topo_cfg["n_agents"])
        edges = [tuple(int(x) for x in e) for e in topo_cfg["edges"]]
        limit = topo_cfg["p_t_max"]
        if isinstance(limit, (int, float)):
            limits = {e: float(limit) for e in edges}
        else:
            if len(limit) != len(edges):
                raise ConfigError("p_t_max list must have one entry per edge")
            limits = {}
            for e, lim in zip(edges, limit):
                if isinstance(lim, (list, tuple)):
                    if len(lim) != 2 or lim[0] != lim[1]:
                        raise ConfigError(f"asymmetric transfer limit on edge {e}")
                    lim = lim[0]
                limits[e] = float(lim)
        topology = NetworkTopology(n, tuple(edges), limits, float(config["horizon"]["sampling_time"]))
        agent_cfg = config["agents"]
        defaults = dict(agent_cfg.get("defaults", {}))
        overrides = {int(k): v for k, v in (agent_cfg.get("overrides") or {}).items()}
    except KeyError as exc:
        raise ConfigError(f"missing configuration key {exc}") from None
    names = [f for f in MicrogridParams.__dataclass_fields__]
    params = {}
    for i in topology.agents:
        merged = dict(defaults)
        merged.update(overrides.get(i, {}))
        merged = {k: v for k, v in merged.items() if k in names}
        missing = [f for f in names if f not in merged]
        if missing:
            raise ConfigError(f"agent {i} lacks parameters {missing}")
        p = MicrogridParams(**{k: float(merged[k]) for k in names})
        p.validate(f"agent {i}")
        params[i] = p
    return topology, params


def assemble_nominal_problem(agent: AgentModel, x_measured: float, load_forecast: Sequence[float],
                             h_p: int) -> HorizonProblem:
    if not 0.0 <= x_measured <= 1.0:
        raise ValueError(f"measured SoC {x_measured} outside [0, 1]")
    forecast = np.asarray(load_forecast, dtype=float)
    if forecast.size < h_p:
        raise ValueError("load forecast shorter than the horizon")
    p = agent.params
    step_lb = np.concatenate([[-p.p_ch, p.pG_min, 0.0], -np.asarray(agent.p_t_max, dtype=float)])
    step_ub = np.concatenate([[p.p_dh, p.pG_max, p.p_im_max], np.asarray(agent.p_t_max, dtype=float)])
    return HorizonProblem(
        agent=agent, h_p=h_p, x0=float(x_measured), forecast=forecast[:h_p].copy(),
        lb=np.tile(step_lb, h_p), ub=np.tile(step_ub, h_p),
        soc_lo=np.full(h_p, p.x_min), soc_hi=np.full(h_p, p.x_max))
