"""Comparison methods run against METAFORS on the same forecaster reservoir.

Parameter-aware baselines (``nearest``, ``interp``) read the dynamical
parameters of the library members from a :class:`LabeledLibrary`; METAFORS
itself never sees them.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import MetaLibrary
from .reservoir import (
    Forecast,
    Reservoir,
    RidgeAccumulator,
    TrainedModel,
    drive_open_loop,
    fitting_pairs,
    synchronize_then_forecast,
    train_output_layer,
)
from .systems import Series

__all__ = [
    "METHODS",
    "parse_method",
    "LabeledLibrary",
    "zero_start_forecast",
    "train_multitask",
    "train_on_test",
    "train_on_test_n_trans",
    "nearest_library_index",
    "nearest_library_forecast",
    "interpolated_model_1d",
    "interpolated_forecaster_1d",
    "barycentric_weights",
    "interpolation_weights_2d",
    "interpolated_model_2d",
    "interpolated_forecaster_2d",
    "backward_extrapolation_start",
    "training_data_search",
    "training_data_search_start",
]

METHODS = (
    "metafors",
    "metafors_zero_start",
    "zero_start_library_k",
    "multitask",
    "train_on_test",
    "nearest",
    "interp",
    "backward_const",
    "train_search",
)
_LIBRARY_K = re.compile(r"zero_start_library_(\d+|k)$")

BACKWARD_PAD = 200
BARY_TOL = 1e-12


def parse_method(method: str) -> Tuple[str, Optional[int]]:
    """Split a method identifier into ``(family, member)``.

    ``zero_start_library_<k>`` selects library member ``k``; the bare
    ``zero_start_library_k`` means member 0.
    """
    m = _LIBRARY_K.match(method)
    if m:
        k = m.group(1)
        return "zero_start_library_k", 0 if k == "k" else int(k)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; known: {', '.join(METHODS)}")
    return method, None


@dataclass(frozen=True, eq=False)
class LabeledLibrary:
    """A library plus the dynamical parameters of each member, ``(N_L, d)``."""

    library: MetaLibrary
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.float64)
        if labels.ndim == 1:
            labels = labels[:, None]
        if labels.shape[0] != self.library.n_members:
            raise ValueError(f"{labels.shape[0]} labels for {self.library.n_members} members")
        object.__setattr__(self, "labels", labels)

    @property
    def models(self) -> List[TrainedModel]:
        return self.library.models


def zero_start_forecast(forecaster: Reservoir, model: TrainedModel, cue: Series, n_steps: int) -> Forecast:
    return synchronize_then_forecast(forecaster, model, None, cue, n_steps)


def train_multitask(forecaster: Reservoir, long_signals: Sequence[Series], n_trans: int, alpha: float) -> TrainedModel:
    """One output layer fit on the pooled fitting pairs of all signals.

    Each signal is driven from the zero state and loses its own ``n_trans``
    transient; the normal equations are summed across signals.
    """
    if not long_signals:
        raise ValueError("multi-task training needs at least one signal")
    acc = RidgeAccumulator(forecaster.n_nodes, long_signals[0].n_sys)
    for k, sig in enumerate(long_signals):
        if sig.n_steps <= n_trans + 1:
            raise ValueError(f"signal {k} too short for n_trans={n_trans}")
        states = drive_open_loop(forecaster, None, sig)
        acc.add(*fitting_pairs(states, sig.data, n_trans))
    return TrainedModel(acc.solve(alpha), forecaster.hash, float(alpha), acc.count)


def train_on_test_n_trans(n_test: int, family: str) -> int:
    """Transient discarded when fitting directly on a short test signal."""
    if family == "map":
        if n_test == 2:
            return 0
        return n_test // 2 if n_test < 10 else 5
    if family == "lorenz":
        return n_test // 10 if n_test < 100 else 10
    raise ValueError(f"unknown experiment family {family!r}; use 'map' or 'lorenz'")


def train_on_test(forecaster: Reservoir, cue: Series, alpha: float, family: str = "map") -> TrainedModel:
    if cue.n_steps < 2:
        raise ValueError("cannot train on a test signal that contains only a single data point")
    model, _ = train_output_layer(forecaster, cue, train_on_test_n_trans(cue.n_steps, family), alpha)
    return model


def _unit_rescale(labels: np.ndarray, query: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    lo = labels.min(axis=0)
    span = labels.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    return (labels - lo) / span, (np.asarray(query, dtype=np.float64) - lo) / span


def nearest_library_index(labels: np.ndarray, query) -> int:
    """Euclidean-nearest member after rescaling each axis to the unit interval.

    Ties go to the lowest member index.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim == 1:
        labels = labels[:, None]
    if labels.shape[0] == 0:
        raise ValueError("empty library")
    scaled, q = _unit_rescale(labels, np.atleast_1d(query))
    return int(np.argmin(np.sum((scaled - q) ** 2, axis=1)))


def nearest_library_forecast(forecaster: Reservoir, lib: LabeledLibrary, test_params, cue: Series,
                             n_steps: int) -> Forecast:
    k = nearest_library_index(lib.labels, test_params)
    return zero_start_forecast(forecaster, lib.models[k], cue, n_steps)


def _combine(models: Sequence[TrainedModel], weights: Sequence[float]) -> TrainedModel:
    w = sum(float(c) * m.w_out for c, m in zip(weights, models))
    return TrainedModel(w, models[0].reservoir_hash, float("nan"), 0)


def interpolated_model_1d(labels: Sequence[float], models: Sequence[TrainedModel], test_param: float) -> TrainedModel:
    """Element-wise linear interpolation/extrapolation of output layers.

    Inside the label range the two members that most closely bracket
    ``test_param`` are blended; outside it the line through the two nearest
    members is extended.
    """
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.size < 2:
        raise ValueError("1-D interpolation needs at least two library members")
    x = float(test_param)
    exact = np.flatnonzero(labels == x)
    if exact.size:
        return models[int(exact[0])]
    below = np.flatnonzero(labels < x)
    above = np.flatnonzero(labels > x)
    if below.size and above.size:
        lo = below[np.argmax(labels[below])]
        hi = above[np.argmin(labels[above])]
        t = (x - labels[lo]) / (labels[hi] - labels[lo])
        return _combine([models[lo], models[hi]], [1.0 - t, t])
    order = np.argsort(np.abs(labels - x), kind="stable")
    near, second = order[0], order[1]
    gap = labels[near] - labels[second]
    if gap == 0:
        return models[near]
    s = (x - labels[near]) / gap
    return _combine([models[near], models[second]], [1.0 + s, -s])


def interpolated_forecaster_1d(forecaster: Reservoir, lib: LabeledLibrary, test_param: float, cue: Series,
                               n_steps: int) -> Forecast:
    model = interpolated_model_1d(lib.labels[:, 0], lib.models, test_param)
    return zero_start_forecast(forecaster, model, cue, n_steps)


def barycentric_weights(triangle: np.ndarray, point: np.ndarray) -> Optional[np.ndarray]:
    """Barycentric coordinates of ``point`` in a 2-D triangle, None if degenerate."""
    p0, p1, p2 = np.asarray(triangle, dtype=np.float64)
    T = np.column_stack([p1 - p0, p2 - p0])
    det = T[0, 0] * T[1, 1] - T[0, 1] * T[1, 0]
    scale = max(np.abs(T).max(), 1e-300) ** 2
    if abs(det) <= 1e-12 * scale:
        return None
    l1, l2 = np.linalg.solve(T, np.asarray(point, dtype=np.float64) - p0)
    return np.array([1.0 - l1 - l2, l1, l2])


def interpolation_weights_2d(labels: np.ndarray, query) -> Tuple[Tuple[int, ...], np.ndarray]:
    """Members and weights for barycentric interpolation at ``query``.

    Axes are rescaled to unit intervals. Every non-degenerate triangle of
    library points is tried; among those containing the query the smallest
    one wins (first in lexicographic order on ties). Queries outside the
    convex hull, or libraries with no non-degenerate triangle, get the nearest
    member with weight 1.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[1] != 2:
        raise ValueError("2-D interpolation needs (N_L, 2) labels")
    scaled, q = _unit_rescale(labels, query)
    exact = np.flatnonzero(np.all(labels == np.asarray(query, dtype=np.float64), axis=1))
    if exact.size:
        return (int(exact[0]),), np.array([1.0])
    best = None
    for tri in itertools.combinations(range(labels.shape[0]), 3):
        w = barycentric_weights(scaled[list(tri)], q)
        if w is None or w.min() < -BARY_TOL:
            continue
        p0, p1, p2 = scaled[list(tri)]
        area = 0.5 * abs((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))
        if best is None or area < best[0]:
            best = (area, tri, w)
    if best is None:
        return (nearest_library_index(labels, query),), np.array([1.0])
    return best[1], best[2]


def interpolated_model_2d(labels: np.ndarray, models: Sequence[TrainedModel], query) -> TrainedModel:
    members, weights = interpolation_weights_2d(labels, query)
    if len(members) == 1:
        return models[members[0]]
    return _combine([models[k] for k in members], weights)


def interpolated_forecaster_2d(forecaster: Reservoir, lib: LabeledLibrary, test_params, cue: Series,
                               n_steps: int) -> Forecast:
    model = interpolated_model_2d(lib.labels, lib.models, test_params)
    return zero_start_forecast(forecaster, model, cue, n_steps)


def backward_extrapolation_start(forecaster: Reservoir, model: TrainedModel, cue: Series, n_steps: int,
                                 pad: int = BACKWARD_PAD) -> Forecast:
    """Prepend ``pad`` copies of the first cue value, zero-start, sync, forecast."""
    padded = np.concatenate([np.repeat(cue.data[:1], pad, axis=0), cue.data])
    return zero_start_forecast(forecaster, model, Series(padded, cue.dt), n_steps)


def training_data_search(library: MetaLibrary, cue: Series) -> Tuple[int, float]:
    """Start step and RMS distance of the training window closest to ``cue``.

    The search covers window starts ``n_trans .. N_train - len(cue)`` of the
    single library signal; ties go to the earliest start.
    """
    if library.n_members != 1:
        raise ValueError("training-data search expects a single-member library")
    signal = library.long_signals[0].data
    n = cue.n_steps
    starts = np.arange(library.n_trans, signal.shape[0] - n + 1)
    if starts.size == 0:
        raise ValueError("no training window of the cue's length after the transient")
    windows = np.lib.stride_tricks.sliding_window_view(signal, n, axis=0)[starts]
    # windows: (n_starts, n_sys, n)
    diff = windows - cue.data.T[None]
    rms = np.sqrt(np.mean(diff ** 2, axis=(1, 2)))
    best = int(np.argmin(rms))
    return int(starts[best]), float(rms[best])


def training_data_search_start(forecaster: Reservoir, library: MetaLibrary, cue: Series, n_steps: int) -> Forecast:
    """Start from the stored state at the best-matching training window, sync, forecast."""
    start, _ = training_data_search(library, cue)
    r_init = library.cold_start(0, start)
    return synchronize_then_forecast(forecaster, library.models[0], r_init, cue, n_steps)
