"""Attack detection from SoC measurements and Bayesian neighbor identification.

Each regular agent keeps a probability vector over the hypotheses
``H0`` (no adversarial neighbor) and ``H^j`` (neighbor ``j`` is adversarial).
A step is flagged as attacked when the SoC measurement departs from its
prediction by more than a load-forecast error alone can explain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .model import N_LOCAL, MicrogridParams


class DetectionAnomaly(RuntimeWarning):
    """An observation had zero probability under every hypothesis."""


@dataclass
class HypothesisState:
    """Posterior over ``(H0, H^j for j in neighbors)`` plus the attack counter."""

    probs: np.ndarray
    n_attacks: int = 0
    threshold: float = 0.0
    anomalies: int = 0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)

    @property
    def p_none(self) -> float:
        return float(self.probs[0])

    @property
    def p_neighbors(self) -> np.ndarray:
        return self.probs[1:]

    def identified(self, tol: float = 0.0) -> Optional[int]:
        """Position of a neighbor whose hypothesis has reached 1 (within ``tol``)."""
        hits = np.nonzero(self.p_neighbors >= 1.0 - tol)[0]
        return int(hits[0]) if hits.size else None


def init_priors(P_at: float, n_neighbors: int, threshold: float = 0.0) -> HypothesisState:
    if not 0.0 < P_at <= 1.0:
        raise ValueError("P_at must lie in (0, 1]")
    if n_neighbors < 1:
        raise ValueError("an agent needs at least one neighbor to form hypotheses")
    probs = np.concatenate([[1.0 - P_at], np.full(n_neighbors, P_at / n_neighbors)])
    return HypothesisState(probs, 0, threshold)


def detection_threshold(params: MicrogridParams, b: float) -> float:
    return abs(b) * params.d_max


def detection_residual(x_k: float, x_prev: float, u_star_prev: Sequence[float],
                       forecast_prev: float, params: MicrogridParams,
                       b: float) -> Tuple[float, bool]:
    """Deviation of the measured SoC from its model prediction.

    The prediction uses the implemented first-step input at ``k-1``: since
    the balance ``p_st = forecast - p_G - p_im - sum p_t`` holds for the plan,
    the prediction ``a x + b (forecast - p_G - p_im - sum p_t)`` equals the
    planned next SoC and the residual is ``|b| |w_d + w_a|``.
    """
    u = np.asarray(u_star_prev, dtype=float)
    b_vec = np.concatenate([[0.0], -np.ones(u.size - 1)]) * b
    predicted = params.a * x_prev + b_vec @ u + b * forecast_prev
    delta = abs(x_k - predicted)
    return float(delta), bool(delta > detection_threshold(params, b))


def bayes_update(h: HypothesisState, attacked: bool, v: Sequence[int], P_at: float,
                 record_attack: bool = True) -> HypothesisState:
    """Posterior after one observation made under connection vector ``v``.

    Likelihoods: under ``H0`` an attack has probability 0; under ``H^j`` it
    has probability ``v_j P_at``. A zero marginal leaves the state unchanged
    and increments ``anomalies``.
    """
    v = np.asarray(v, dtype=float)
    if v.size != h.probs.size - 1:
        raise ValueError("connection vector does not match the hypothesis set")
    if attacked:
        like = np.concatenate([[0.0], v * P_at])
    else:
        like = np.concatenate([[1.0], 1.0 - v * P_at])
    joint = h.probs * like
    marginal = joint.sum()
    n_at = h.n_attacks + (1 if attacked and record_attack else 0)
    if marginal <= 0.0:
        return HypothesisState(h.probs.copy(), n_at, h.threshold, h.anomalies + 1)
    post = joint / marginal
    # renormalize once more so the sum is 1 to rounding
    post = post / post.sum()
    return HypothesisState(post, n_at, h.threshold, h.anomalies)


@dataclass
class AdversaryPolicy:
    """Bernoulli attack process of one adversarial agent.

    On an attack step the adversary draws ``magnitude_fraction * p_t_max``
    extra power from every connected regular neighbor, limited by the
    physical transfer bound.
    """

    agent_id: int
    attack_probability: float = 0.3
    magnitude_fraction: float = 0.5
    stream: int = 0

    def __post_init__(self):
        if not 0.0 <= self.attack_probability <= 1.0:
            raise ValueError("attack_probability must lie in [0, 1]")
        if self.magnitude_fraction < 0:
            raise ValueError("magnitude_fraction must be nonnegative")


@dataclass
class AttackOutcome:
    attacked: bool
    implemented: np.ndarray
    extra_draw: Dict[int, float] = field(default_factory=dict)


def inject_attack(policy: AdversaryPolicy, u_star: Sequence[float], neighbors: Sequence[int],
                  p_t_max: Sequence[float], targets: Sequence[int], rng=None,
                  attack: Optional[bool] = None, pG_min: float = 0.0,
                  p_st_min: float = -np.inf) -> AttackOutcome:
    """Implemented first-step input of an adversary.

    ``targets`` are the neighbors the adversary may draw from (connected
    regular agents). The attack decision comes from ``attack`` when given,
    otherwise from one Bernoulli draw on ``rng``. The extra power received
    is offset by less generation, then by more storage charging, so the
    adversary's own balance still holds.
    """
    u = np.array(u_star, dtype=float)
    if attack is None:
        attack = bool(rng.random() < policy.attack_probability)
    if not attack:
        return AttackOutcome(False, u, {})
    extra = {}
    for pos, j in enumerate(neighbors):
        if j not in targets:
            continue
        lim = p_t_max[pos]
        cur = u[N_LOCAL + pos]
        new = min(cur + policy.magnitude_fraction * lim, lim)
        draw = max(new - cur, 0.0)
        if draw > 0.0:
            u[N_LOCAL + pos] = new
            extra[j] = draw
    surplus = sum(extra.values())
    cut = min(surplus, max(u[1] - pG_min, 0.0))
    u[1] -= cut
    u[0] -= surplus - cut
    if u[0] < p_st_min:
        # the storage cannot absorb the rest; pull less
        excess = p_st_min - u[0]
        u[0] = p_st_min
        for j in sorted(extra, reverse=True):
            take = min(excess, extra[j])
            pos = list(neighbors).index(j)
            u[N_LOCAL + pos] -= take
            extra[j] -= take
            excess -= take
            if excess <= 0:
                break
        extra = {j: d for j, d in extra.items() if d > 0}
    return AttackOutcome(bool(extra), u, extra)
