"""Forecast quality measures: valid time, autonomous one-step error, CDFs, bifurcation data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .reservoir import Forecast
from .systems import Series, TrueDynamics

__all__ = [
    "ForecastEvaluation",
    "PartialObservationError",
    "valid_time",
    "autonomous_one_step_error",
    "empirical_cdf",
    "ks_distance",
    "escapes_unit_interval",
    "bifurcation_points",
    "evaluate",
]

ESCAPE_RUN = 20
STD_FLOOR = 1e-12


class PartialObservationError(ValueError):
    """The one-step error needs the full system state; use valid_time instead."""


@dataclass(frozen=True)
class ForecastEvaluation:
    t_valid: float
    censored: bool
    one_step_error: Optional[float]
    diverged: bool

    def __post_init__(self):
        if not self.t_valid >= 0:
            raise ValueError(f"t_valid must be non-negative, got {self.t_valid}")


def _values(x: Union[Series, Forecast, np.ndarray]) -> np.ndarray:
    data = x.data if isinstance(x, (Series, Forecast)) else np.asarray(x, dtype=np.float64)
    return data[:, None] if data.ndim == 1 else data


def valid_time(predicted, truth, dt: float = 1.0) -> Tuple[float, bool]:
    """Time until the normalized error first exceeds one.

    Both arguments start at the first forecast step and are compared over the
    prediction length. The error at each step is the Euclidean norm of the
    component-wise difference divided by the component-wise standard
    deviation of ``truth`` over the compared window. Non-finite predictions
    count as exceedances. A component whose truth is constant up to rounding
    (std below ``STD_FLOOR`` relative to its magnitude) is compared in
    absolute terms instead.

    Returns:
        ``(t_valid, censored)``; a forecast that never exceeds the threshold
        gets the full horizon ``n_for * dt`` and ``censored=True``.
    """
    pred, true = _values(predicted), _values(truth)
    n_for = pred.shape[0]
    if n_for == 0:
        raise ValueError("empty forecast")
    if true.shape[0] < n_for or true.shape[1] != pred.shape[1]:
        raise ValueError(f"truth of shape {true.shape} does not cover forecast of shape {pred.shape}")
    true = true[:n_for]
    scale = true.std(axis=0)
    scale = np.where(scale > STD_FLOOR * np.maximum(1.0, np.abs(true).max(axis=0)), scale, 1.0)
    with np.errstate(invalid="ignore", over="ignore"):
        err = np.sqrt(np.sum(((pred - true) / scale) ** 2, axis=1))
    bad = ~(err <= 1.0)
    if not bad.any():
        return n_for * dt, True
    return int(np.argmax(bad)) * dt, False


def autonomous_one_step_error(predicted, dynamics: TrueDynamics, n_discard: int = 0) -> float:
    """Mean ``||u_hat(t+1) - G(u_hat(t))||`` along the forecast after ``n_discard`` steps.

    Returns ``inf`` if the retained forecast contains non-finite values.
    """
    pred = _values(predicted)
    if pred.shape[1] != dynamics.n_sys:
        raise PartialObservationError(
            f"forecast has {pred.shape[1]} of {dynamics.n_sys} state components; the one-step "
            "error needs the full state, use valid_time for partial observations"
        )
    if pred.shape[0] < n_discard + 2:
        raise ValueError(f"forecast of {pred.shape[0]} steps too short for n_discard={n_discard}")
    kept = pred[n_discard:]
    if not np.all(np.isfinite(kept)):
        return float("inf")
    with np.errstate(over="ignore", invalid="ignore"):
        diff = np.linalg.norm(kept[1:] - dynamics(kept[:-1]), axis=1)
        value = float(np.mean(diff))
    return value if np.isfinite(value) else float("inf")


def empirical_cdf(series, grid, component: int = 0) -> np.ndarray:
    """Fraction of samples ``<=`` each grid value."""
    x = _values(series)
    if x.shape[0] == 0:
        raise ValueError("empty series")
    x = np.sort(x[:, component])
    return np.searchsorted(x, np.asarray(grid, dtype=np.float64), side="right") / x.size


def ks_distance(a, b, component: int = 0) -> float:
    """Two-sample Kolmogorov-Smirnov statistic on the merged sample grid."""
    xa, xb = _values(a)[:, component], _values(b)[:, component]
    if xa.size == 0 or xb.size == 0:
        raise ValueError("empty series")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(xb))):
        return 1.0
    grid = np.concatenate([xa, xb])
    return float(np.max(np.abs(empirical_cdf(xa, grid) - empirical_cdf(xb, grid))))


def escapes_unit_interval(values, run: int = ESCAPE_RUN) -> bool:
    """True if the trajectory ends outside ``[0, 1]`` and stays out.

    A trajectory has left for good when its last ``run`` samples all lie
    outside the interval (non-finite samples count as outside).
    """
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        return False
    tail = x[-min(run, x.size):]
    with np.errstate(invalid="ignore"):
        inside = (tail >= 0.0) & (tail <= 1.0)
    return not inside.any()


def bifurcation_points(forecast, n_discard: int) -> Tuple[np.ndarray, bool]:
    """Retained forecast values after ``n_discard`` steps and the escape flag."""
    x = _values(forecast)[:, 0]
    if x.size < n_discard + 1:
        raise ValueError(f"forecast of {x.size} steps too short for n_discard={n_discard}")
    return x[n_discard:].copy(), escapes_unit_interval(x)


def evaluate(forecast: Forecast, truth, dt: float, dynamics: Optional[TrueDynamics] = None,
             n_discard: int = 0) -> ForecastEvaluation:
    t_valid, censored = valid_time(forecast, truth, dt)
    eps = None
    if dynamics is not None and forecast.n_sys == dynamics.n_sys:
        eps = autonomous_one_step_error(forecast, dynamics, n_discard)
    return ForecastEvaluation(t_valid, censored, eps, forecast.diverged)
