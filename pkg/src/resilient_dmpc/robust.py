"""Constraint tightening against load-forecast errors and neighbor attacks.

A disturbance ``w`` hits the storage of an agent directly: the realized
storage power is ``p_st + w``. Shrinking the storage-power window by ``w_max``
and the SoC window by ``|b| w_max`` on both sides guarantees that any
disturbance with ``|w| <= w_max`` keeps the realized values inside the
original limits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import ST, AgentModel, HorizonProblem, MicrogridParams


class TighteningError(ValueError):
    """The tightened windows would be empty for the requested ``w_max``."""


@dataclass(frozen=True)
class RobustBounds:
    w_max: float
    soc_window: tuple
    storage_window: tuple


def worst_case_disturbance(agent: AgentModel, v: Optional[Sequence[int]] = None,
                           d_max: Optional[float] = None) -> float:
    """Largest total disturbance: a full transfer reversal on the worst connected edge plus load error."""
    d = agent.params.d_max if d_max is None else d_max
    limits = np.asarray(agent.p_t_max, dtype=float)
    if v is None:
        v = np.ones(limits.size, dtype=int)
    v = np.asarray(v)
    if v.size != limits.size:
        raise ValueError("connection vector does not match the neighbor list")
    if np.any((v != 0) & (v != 1)):
        raise ValueError("connection entries must be 0 or 1")
    connected = limits[v == 1]
    return float(2.0 * connected.max() + d) if connected.size else float(d)


def feasibility_threshold(params: MicrogridParams, b: float) -> float:
    return min(0.5 * (params.p_ch + params.p_dh), -(params.x_max - params.x_min) / (2.0 * b))


def feasibility_condition(params: MicrogridParams, w_max: float, b: float) -> bool:
    """True iff the tightened storage-power and SoC windows are nonempty."""
    return w_max <= feasibility_threshold(params, b)


def robust_bounds(params: MicrogridParams, w_max: float, b: float) -> RobustBounds:
    if not feasibility_condition(params, w_max, b):
        raise TighteningError(
            f"w_max={w_max:g} exceeds the tightening threshold {feasibility_threshold(params, b):g}")
    # b < 0, so b * w_max is the negative SoC margin
    soc = (params.x_min - b * w_max, params.x_max + b * w_max)
    st = (-params.p_ch + w_max, params.p_dh - w_max)
    if soc[0] > soc[1] or st[0] > st[1]:
        raise TighteningError("tightened window is empty")
    return RobustBounds(float(w_max), soc, st)


def tighten_constraints(agent: AgentModel, w_max: float, base: HorizonProblem) -> HorizonProblem:
    """Copy of ``base`` with storage and SoC limits shrunk by ``w_max`` at every horizon step."""
    if w_max < 0:
        raise ValueError("w_max must be nonnegative")
    rb = robust_bounds(agent.params, w_max, agent.b)
    out = base.copy()
    st = np.array([base.idx(l, ST) for l in range(base.h_p)])
    out.lb[st] = np.maximum(base.lb[st], rb.storage_window[0])
    out.ub[st] = np.minimum(base.ub[st], rb.storage_window[1])
    out.soc_lo = np.maximum(base.soc_lo, rb.soc_window[0])
    out.soc_hi = np.minimum(base.soc_hi, rb.soc_window[1])
    return out
