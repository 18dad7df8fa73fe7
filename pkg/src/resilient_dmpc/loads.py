"""Daily load profiles and noisy realizations."""

from __future__ import annotations

import numpy as np

from .model import LoadTrace

PROFILE_KINDS = ("residential", "industrial")
POINTS_PER_DAY = 96


def _bump(hours: np.ndarray, center: float, width: float) -> np.ndarray:
    # wrapped around midnight so the day joins smoothly
    d = np.abs(hours - center)
    d = np.minimum(d, 24.0 - d)
    return np.exp(-0.5 * (d / width) ** 2)


def _residential() -> np.ndarray:
    h = np.arange(POINTS_PER_DAY) * 24.0 / POINTS_PER_DAY
    s = 0.35 + 0.35 * _bump(h, 7.5, 1.4) + 0.65 * _bump(h, 19.5, 2.2)
    return s / s.max()


def _industrial() -> np.ndarray:
    h = np.arange(POINTS_PER_DAY) * 24.0 / POINTS_PER_DAY
    rise = 1.0 / (1.0 + np.exp(-(h - 7.0) / 0.6))
    fall = 1.0 / (1.0 + np.exp((h - 18.0) / 0.6))
    s = 0.3 + 0.7 * rise * fall - 0.08 * _bump(h, 12.5, 0.5)
    return s / s.max()


_SHAPES = {"residential": _residential(), "industrial": _industrial()}


def profile_shape(kind: str) -> np.ndarray:
    """96-point daily shape with maximum 1 (copy)."""
    try:
        return _SHAPES[kind].copy()
    except KeyError:
        raise ValueError(f"unknown load profile {kind!r}; expected one of {PROFILE_KINDS}") from None


def generate_loads(profile_kind: str, peak: float, d_max: float, steps: int = POINTS_PER_DAY,
                   seed=0) -> LoadTrace:
    """Forecast ``shape * peak`` (wrapping past one day) and actual load with
    uniform error in ``[-d_max, d_max]``, clamped at zero.

    ``seed`` is anything ``numpy.random.default_rng`` accepts.
    """
    if peak <= 0:
        raise ValueError("peak must be positive")
    if d_max < 0:
        raise ValueError("d_max must be nonnegative")
    shape = profile_shape(profile_kind)
    forecast = peak * shape[np.arange(steps) % shape.size]
    if d_max == 0:
        return LoadTrace(forecast, forecast.copy())
    rng = np.random.default_rng(seed)
    actual = np.maximum(forecast + rng.uniform(-d_max, d_max, size=steps), 0.0)
    return LoadTrace(forecast, actual)
