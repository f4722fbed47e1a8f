"""Ground-truth generators for the logistic map, Gauss iterated map and Lorenz-63.

All generators return a :class:`Series`, a read-only ``(n_steps, n_sys)``
array plus its sampling interval. Row 0 is the initial condition (after any
discarded transient).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numba
import numpy as np

from ._rng import substream

__all__ = [
    "MapKind",
    "MapParams",
    "LorenzParams",
    "Series",
    "DomainEscapeError",
    "DivergenceError",
    "logistic_trajectory",
    "gauss_trajectory",
    "lorenz_trajectory",
    "lorenz_rk4_step",
    "is_periodic",
    "chaotic_map_library",
    "sample_chaotic_params",
    "add_observational_noise",
    "partial_observation",
    "library_std",
    "random_lorenz_state",
    "TrueDynamics",
]

PERIOD_MAX = 64
PERIOD_TOL = 1e-6
PERIOD_WINDOW = max(4 * PERIOD_MAX, 200)
# Translation in exp(-a (x - b)^2) that turns the mouse map exp(-a x^2) - 0.5
# into a map of (0, 1) onto itself.
GAUSS_B = 0.5


class DomainEscapeError(ArithmeticError):
    """A map iterate became non-finite."""

    def __init__(self, step: int, value: float):
        super().__init__(f"iterate left the finite domain at step {step} (value {value!r})")
        self.step = step


class DivergenceError(ArithmeticError):
    """An ODE integration produced a non-finite state."""

    def __init__(self, step: int):
        super().__init__(f"integration diverged at step {step}")
        self.step = step


class MapKind(str, enum.Enum):
    LOGISTIC = "logistic"
    GAUSS = "gauss"


@dataclass(frozen=True)
class MapParams:
    kind: MapKind
    mu: float = float("nan")
    a: float = float("nan")
    b: float = GAUSS_B

    @classmethod
    def logistic(cls, mu: float) -> "MapParams":
        return cls(MapKind.LOGISTIC, mu=float(mu))

    @classmethod
    def gauss(cls, a: float, b: float = GAUSS_B) -> "MapParams":
        return cls(MapKind.GAUSS, a=float(a), b=float(b))

    @property
    def label(self) -> float:
        """The scalar dynamical parameter that varies within a family."""
        return self.mu if self.kind is MapKind.LOGISTIC else self.a

    def trajectory(self, x0: float, n_total: int, n_discard: int = 0) -> "Series":
        if self.kind is MapKind.LOGISTIC:
            return logistic_trajectory(self.mu, x0, n_total, n_discard)
        return gauss_trajectory(self.a, self.b, x0, n_total, n_discard)


@dataclass(frozen=True)
class LorenzParams:
    omega_t: float = 1.0
    v1: float = 10.0
    v2: float = 28.0
    v3: float = 8.0 / 3.0
    dt: float = 0.01

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


@dataclass(frozen=True)
class Series:
    """A uniformly sampled vector time series.

    Attributes:
        data: ``(n_steps, n_sys)`` float array, read-only.
        dt: Sampling interval in the system's time units.
    """

    data: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise ValueError(f"series data must be 1-D or 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"series must have at least one step and one component, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("series contains non-finite entries")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_steps(self) -> int:
        return self.data.shape[0]

    @property
    def n_sys(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.n_steps

    def __getitem__(self, item: slice) -> "Series":
        if not isinstance(item, slice):
            raise TypeError("Series supports slice indexing only")
        return Series(self.data[item], self.dt)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Series):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.data, other.data)

    __hash__ = None

    def to_csv(self, path: Union[str, Path]) -> None:
        """Write ``t,x0,x1,...`` rows with round-trip exact doubles."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x{k}" for k in range(self.n_sys)])
            for k, row in enumerate(self.data):
                writer.writerow([_fmt(k * self.dt)] + [_fmt(v) for v in row])

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "Series":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if not header or header[0] != "t" or not body:
            raise ValueError(f"{path}: not a series CSV")
        values = np.array([[float(v) for v in row] for row in body])
        dt = values[1, 0] - values[0, 0] if len(values) > 1 else 1.0
        return cls(values[:, 1:], dt)


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _check_counts(n_total: int, n_discard: int) -> None:
    if n_total < 1:
        raise ValueError(f"n_total must be positive, got {n_total}")
    if not 0 <= n_discard < n_total:
        raise ValueError(f"need 0 <= n_discard < n_total, got {n_discard} and {n_total}")


def logistic_trajectory(mu: float, x0: float, n_total: int, n_discard: int = 0) -> Series:
    """Iterate ``x -> mu x (1 - x)`` and keep the last ``n_total - n_discard`` values."""
    _check_counts(n_total, n_discard)
    if not 0.0 < x0 < 1.0:
        raise ValueError(f"logistic x0 must lie in (0, 1), got {x0}")
    out = np.empty(n_total)
    x = float(x0)
    for n in range(n_total):
        if not math.isfinite(x):
            raise DomainEscapeError(n, x)
        out[n] = x
        x = mu * x * (1.0 - x)
    return Series(out[n_discard:], 1.0)


def gauss_trajectory(a: float, b: float, x0: float, n_total: int, n_discard: int = 0) -> Series:
    """Iterate the translated Gauss map ``x -> exp(-a (x - b)^2)``."""
    _check_counts(n_total, n_discard)
    out = np.empty(n_total)
    x = float(x0)
    for n in range(n_total):
        if not math.isfinite(x):
            raise DomainEscapeError(n, x)
        out[n] = x
        x = math.exp(-a * (x - b) ** 2)
    return Series(out[n_discard:], 1.0)


@numba.njit(cache=True, nogil=True)
def _lorenz_rhs(x1, x2, x3, w, v1, v2, v3):
    return w * (v1 * (x2 - x1)), w * (x1 * (v2 - x3) - x2), w * (x1 * x2 - v3 * x3)


@numba.njit(cache=True, nogil=True)
def _lorenz_rk4(x0, w, v1, v2, v3, dt, n_total):
    out = np.empty((n_total, 3))
    x1, x2, x3 = x0[0], x0[1], x0[2]
    half = 0.5 * dt
    for n in range(n_total):
        out[n, 0] = x1
        out[n, 1] = x2
        out[n, 2] = x3
        a1, a2, a3 = _lorenz_rhs(x1, x2, x3, w, v1, v2, v3)
        b1, b2, b3 = _lorenz_rhs(x1 + half * a1, x2 + half * a2, x3 + half * a3, w, v1, v2, v3)
        c1, c2, c3 = _lorenz_rhs(x1 + half * b1, x2 + half * b2, x3 + half * b3, w, v1, v2, v3)
        d1, d2, d3 = _lorenz_rhs(x1 + dt * c1, x2 + dt * c2, x3 + dt * c3, w, v1, v2, v3)
        x1 = x1 + dt / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
        x2 = x2 + dt / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
        x3 = x3 + dt / 6.0 * (a3 + 2.0 * b3 + 2.0 * c3 + d3)
    return out


def lorenz_trajectory(params: LorenzParams, x0: Sequence[float], n_total: int, n_discard: int = 0) -> Series:
    """Classical fixed-step RK4 integration of the time-scaled Lorenz-63 system."""
    _check_counts(n_total, n_discard)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (3,):
        raise ValueError(f"Lorenz initial state must be a 3-vector, got shape {x0.shape}")
    out = _lorenz_rk4(x0, params.omega_t, params.v1, params.v2, params.v3, params.dt, n_total)
    bad = ~np.all(np.isfinite(out), axis=1)
    if bad.any():
        raise DivergenceError(int(np.argmax(bad)))
    return Series(out[n_discard:], params.dt)


def _lorenz_rhs_array(x: np.ndarray, p: LorenzParams) -> np.ndarray:
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    w = p.omega_t
    return np.stack(
        [w * (p.v1 * (x2 - x1)), w * (x1 * (p.v2 - x3) - x2), w * (x1 * x2 - p.v3 * x3)], axis=-1
    )


def lorenz_rk4_step(states: np.ndarray, params: LorenzParams) -> np.ndarray:
    """One RK4 step applied row-wise to an ``(..., 3)`` array of states."""
    x = np.asarray(states, dtype=np.float64)
    dt, half = params.dt, 0.5 * params.dt
    k1 = _lorenz_rhs_array(x, params)
    k2 = _lorenz_rhs_array(x + half * k1, params)
    k3 = _lorenz_rhs_array(x + half * k2, params)
    k4 = _lorenz_rhs_array(x + dt * k3, params)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class TrueDynamics:
    """The true one-step evolution ``G`` of a system, applied row-wise."""

    params: Union[MapParams, LorenzParams]

    @property
    def n_sys(self) -> int:
        return 3 if isinstance(self.params, LorenzParams) else 1

    def __call__(self, states: np.ndarray) -> np.ndarray:
        x = np.asarray(states, dtype=np.float64)
        p = self.params
        if isinstance(p, LorenzParams):
            return lorenz_rk4_step(x, p)
        if p.kind is MapKind.LOGISTIC:
            return p.mu * x * (1.0 - x)
        return np.exp(-p.a * (x - p.b) ** 2)


def is_periodic(series: Series, max_period: int = PERIOD_MAX, tol: float = PERIOD_TOL) -> bool:
    """True if the tail of a scalar series repeats with some period ``p <= max_period``.

    The check window is the last ``max(4 * max_period, 200)`` samples; a period
    ``p`` is accepted when every pair ``(x[n], x[n+p])`` inside the window
    differs by less than ``tol``.
    """
    if series.n_sys != 1:
        raise ValueError("periodicity detection needs a scalar series")
    window = max(4 * max_period, 200)
    if series.n_steps < window:
        raise ValueError(f"series has {series.n_steps} samples, detection window needs {window}")
    x = series.data[-window:, 0]
    for p in range(1, max_period + 1):
        if np.all(np.abs(x[p:] - x[:-p]) < tol):
            return True
    return False


def chaotic_map_library(
    kind: MapKind,
    value_range: Tuple[float, float],
    n: int,
    seed: int,
    *,
    b: float = GAUSS_B,
    n_total: int = 2000,
    n_discard: int = 1000,
    max_draws: int = 10_000,
) -> List[Tuple[MapParams, Series]]:
    """Draw ``n`` chaotic map systems and their post-transient trajectories.

    Each draw takes a parameter uniformly from ``value_range`` and an initial
    condition uniformly from (0, 1); draws whose trajectory is periodic are
    rejected and redrawn.
    """
    kind = MapKind(kind)
    lo, hi = value_range
    if not lo <= hi:
        raise ValueError(f"empty parameter range {value_range}")
    if kind is MapKind.LOGISTIC and not (0.0 < lo and hi <= 4.0):
        raise ValueError(f"logistic range {value_range} outside (0, 4]")
    rng = substream(seed, "chaotic-map-library", kind.value)
    out = []
    draws = 0
    while len(out) < n:
        if draws >= max_draws:
            raise RuntimeError(
                f"no chaotic {kind.value} parameter found after {max_draws} draws in {value_range}"
            )
        draws += 1
        value = rng.uniform(lo, hi)
        x0 = rng.uniform(0.0, 1.0)
        params = MapParams.logistic(value) if kind is MapKind.LOGISTIC else MapParams.gauss(value, b)
        try:
            traj = params.trajectory(x0, n_total, n_discard)
        except (DomainEscapeError, ValueError):
            continue
        if not is_periodic(traj):
            out.append((params, traj))
    return out


def sample_chaotic_params(
    kind: MapKind, value_range: Tuple[float, float], n: int, seed: int, **kwargs
) -> List[MapParams]:
    """Uniform parameter draws with periodic-attractor values rejected and redrawn."""
    return [p for p, _ in chaotic_map_library(kind, value_range, n, seed, **kwargs)]


def add_observational_noise(
    series: Series, sigma_rel: float, library_std: Sequence[float], seed
) -> Series:
    """Add i.i.d. Gaussian noise with per-component std ``sigma_rel * library_std``."""
    scale = np.asarray(library_std, dtype=np.float64).reshape(-1)
    if scale.shape[0] != series.n_sys:
        raise ValueError(f"library_std has {scale.shape[0]} components, series has {series.n_sys}")
    if sigma_rel < 0:
        raise ValueError(f"sigma_rel must be non-negative, got {sigma_rel}")
    if sigma_rel == 0:
        return series
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = rng.standard_normal(series.data.shape) * (sigma_rel * scale)
    return Series(series.data + noise, series.dt)


def partial_observation(series: Series, component_indices: Iterable[int]) -> Series:
    idx = list(component_indices)
    if not idx:
        raise ValueError("need at least one observed component")
    for k in idx:
        if not 0 <= k < series.n_sys:
            raise IndexError(f"component {k} out of range for a {series.n_sys}-component series")
    return Series(series.data[:, idx], series.dt)


def library_std(signals: Sequence[Series]) -> np.ndarray:
    """Component-wise standard deviation over all library members pooled."""
    return np.concatenate([s.data for s in signals], axis=0).std(axis=0)


def random_lorenz_state(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-10.0, 10.0, size=3)
