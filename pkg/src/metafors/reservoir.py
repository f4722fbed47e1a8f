"""Fixed random reservoirs, ridge-trained output layers and closed-loop forecasts.

The reservoir update is::

    r(t + dt) = (1 - leak) r(t) + leak * tanh(A r(t) + B u(t) + c)

and a trained output layer predicts the next input from the updated state,
``u(t + dt) ~ W_out r(t + dt)``. A state trajectory returned by
:func:`drive_open_loop` has row ``k`` equal to the state after consuming input
rows ``0..k``, i.e. ``r((k + 1) dt)`` when the first input sits at ``t = 0``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numba
import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import eigs

from . import storage
from ._rng import substream
from .systems import Series

__all__ = [
    "ReservoirSpec",
    "Reservoir",
    "TrainedModel",
    "Forecast",
    "RidgeAccumulator",
    "RidgeSingularError",
    "spectral_radius",
    "build_reservoir",
    "drive_open_loop",
    "drive_final_states",
    "train_output_layer",
    "forecast_closed_loop",
    "synchronize_then_forecast",
]

DENSE_EIG_MAX = 1000
MAX_RESAMPLES = 10


class RidgeSingularError(np.linalg.LinAlgError):
    """The regularized Gram matrix is not positive definite."""


@dataclass(frozen=True)
class ReservoirSpec:
    """Hyperparameters and seed that fully determine a reservoir realization."""

    n_nodes: int
    mean_in_degree: float
    spectral_radius: float
    input_strength: float
    bias_strength: float
    leakage: float
    n_inputs: int
    seed: int

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError(f"n_nodes must be >= 1, got {self.n_nodes}")
        if self.n_inputs < 1:
            raise ValueError(f"n_inputs must be >= 1, got {self.n_inputs}")
        if not 0.0 <= self.leakage <= 1.0:
            raise ValueError(f"leakage must lie in [0, 1], got {self.leakage}")
        if self.spectral_radius < 0 or self.mean_in_degree < 0:
            raise ValueError("spectral_radius and mean_in_degree must be non-negative")
        if self.input_strength < 0 or self.bias_strength < 0:
            raise ValueError("input_strength and bias_strength must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Identity token shared by every artifact built on this reservoir."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Reservoir:
    A: sp.csr_matrix
    B: np.ndarray
    c: np.ndarray
    spec: ReservoirSpec

    def __post_init__(self):
        for arr in (self.A.data, self.A.indices, self.A.indptr, self.B, self.c):
            arr.flags.writeable = False

    @property
    def leakage(self) -> float:
        return self.spec.leakage

    @property
    def n_nodes(self) -> int:
        return self.spec.n_nodes

    @property
    def n_inputs(self) -> int:
        return self.spec.n_inputs

    @property
    def hash(self) -> str:
        return self.spec.hash()

    @classmethod
    def from_arrays(cls, A, B, c, spec: ReservoirSpec) -> "Reservoir":
        A = sp.csr_matrix(A, dtype=np.float64)
        A.sum_duplicates()
        A.sort_indices()
        return cls(A, np.array(B, dtype=np.float64), np.array(c, dtype=np.float64).reshape(-1), spec)

    def save(self, path: Union[str, Path]) -> None:
        """Store ``A`` (dense), ``B`` and ``c`` with the spec in the sidecar."""
        storage.write_container(path, {"A": self.A.toarray(), "B": self.B, "c": self.c},
                                {"kind": "Reservoir", "spec": self.spec.to_dict(), "hash": self.hash})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Reservoir":
        arrays, meta = storage.read_container(path)
        if meta.get("kind") != "Reservoir":
            raise ValueError(f"{path}: not a Reservoir container")
        spec = ReservoirSpec(**meta["spec"])
        if spec.hash() != meta["hash"]:
            raise ValueError(f"{path}: spec hash mismatch")
        return cls.from_arrays(arrays["A"], arrays["B"], arrays["c"], spec)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """An output layer ``W_out`` bound to the reservoir it was trained on."""

    w_out: np.ndarray
    reservoir_hash: str
    alpha: float
    n_fit: int

    def __post_init__(self):
        w = np.array(self.w_out, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError(f"w_out must be 2-D, got shape {w.shape}")
        w.flags.writeable = False
        object.__setattr__(self, "w_out", w)

    @property
    def n_out(self) -> int:
        return self.w_out.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.w_out.shape[1]

    def save(self, path: Union[str, Path]) -> None:
        storage.write_container(path, {"w_out": self.w_out},
                                {"kind": "TrainedModel", "reservoir_hash": self.reservoir_hash,
                                 "alpha": self.alpha, "n_fit": self.n_fit})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrainedModel":
        arrays, meta = storage.read_container(path)
        if meta.get("kind") != "TrainedModel":
            raise ValueError(f"{path}: not a TrainedModel container")
        return cls(arrays["w_out"], meta["reservoir_hash"], meta["alpha"], meta["n_fit"])


@dataclass(frozen=True, eq=False)
class Forecast:
    """Closed-loop predictions; ``diverged`` marks a non-finite prediction.

    After divergence the remaining rows are NaN.
    """

    data: np.ndarray
    dt: float = 1.0
    diverged: bool = False

    @property
    def n_steps(self) -> int:
        return self.data.shape[0]

    @property
    def n_sys(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.n_steps


def spectral_radius(A: sp.spmatrix) -> float:
    """Largest eigenvalue magnitude of ``A``.

    Up to ``DENSE_EIG_MAX`` nodes this is an exact dense eigensolve; Arnoldi
    iteration on clustered random spectra can lock onto a sub-dominant
    eigenvalue, so it is reserved for larger matrices.
    """
    n = A.shape[0]
    if A.nnz == 0:
        return 0.0
    if n <= DENSE_EIG_MAX:
        return float(np.max(np.abs(np.linalg.eigvals(A.toarray()))))
    vals = eigs(A, k=6, which="LM", v0=np.ones(n), ncv=min(n - 1, 120), tol=1e-13,
                maxiter=50 * n, return_eigenvectors=False)
    return float(np.max(np.abs(vals)))


def _random_adjacency(rng: np.random.Generator, n: int, mean_in_degree: float) -> sp.csr_matrix:
    p = min(1.0, mean_in_degree / n)
    mask = rng.random((n, n)) < p
    dense = np.zeros((n, n))
    dense[mask] = rng.uniform(-1.0, 1.0, size=int(mask.sum()))
    return sp.csr_matrix(dense)


def build_reservoir(spec: ReservoirSpec) -> Reservoir:
    """Sample ``A``, ``B`` and ``c`` for ``spec``; deterministic in ``spec.seed``.

    Each ordered node pair (self-loops included) is linked independently with
    probability ``mean_in_degree / n_nodes`` and weight ``U[-1, 1]``; ``A`` is
    then rescaled to the requested spectral radius. A draw whose spectral
    radius is numerically zero is resampled from a derived stream.
    """
    n = spec.n_nodes
    for attempt in range(MAX_RESAMPLES):
        A = _random_adjacency(substream(spec.seed, "adjacency", attempt), n, spec.mean_in_degree)
        radius = spectral_radius(A)
        if spec.spectral_radius == 0.0:
            A = sp.csr_matrix((n, n))
            break
        if radius > 1e-12:
            A = (A * (spec.spectral_radius / radius)).tocsr()
            break
    else:
        raise RuntimeError(
            f"adjacency matrix had zero spectral radius in {MAX_RESAMPLES} draws; "
            "increase mean_in_degree"
        )
    B = substream(spec.seed, "input").uniform(-spec.input_strength, spec.input_strength,
                                               size=(n, spec.n_inputs))
    c = substream(spec.seed, "bias").uniform(-spec.bias_strength, spec.bias_strength, size=n)
    return Reservoir.from_arrays(A, B, c, spec)


# -- update kernels ---------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _step(indptr, indices, data, B, c, leak, r, u, pre):
    n = r.shape[0]
    n_in = u.shape[0]
    for i in range(n):
        acc = c[i]
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * r[indices[k]]
        for m in range(n_in):
            acc += B[i, m] * u[m]
        pre[i] = acc
    for i in range(n):
        r[i] = (1.0 - leak) * r[i] + leak * np.tanh(pre[i])


@numba.njit(cache=True, nogil=True)
def _drive_kernel(indptr, indices, data, B, c, leak, r0, inputs):
    n_steps = inputs.shape[0]
    states = np.empty((n_steps, r0.shape[0]))
    r = r0.copy()
    pre = np.empty(r0.shape[0])
    for t in range(n_steps):
        _step(indptr, indices, data, B, c, leak, r, inputs[t], pre)
        states[t] = r
    return states


@numba.njit(cache=True, nogil=True)
def _closed_loop_kernel(indptr, indices, data, B, c, leak, W, r0, n_steps):
    n = r0.shape[0]
    n_out = W.shape[0]
    preds = np.full((n_steps, n_out), np.nan)
    states = np.full((n_steps, n), np.nan)
    r = r0.copy()
    pre = np.empty(n)
    u = np.empty(n_out)
    diverged = False
    for t in range(n_steps):
        for o in range(n_out):
            acc = 0.0
            for i in range(n):
                acc += W[o, i] * r[i]
            u[o] = acc
            if not np.isfinite(acc):
                diverged = True
        if diverged:
            break
        preds[t] = u
        _step(indptr, indices, data, B, c, leak, r, u, pre)
        states[t] = r
    return preds, states, diverged


def _as_inputs(inputs: Union[Series, np.ndarray]) -> np.ndarray:
    data = inputs.data if isinstance(inputs, Series) else np.asarray(inputs, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    return np.ascontiguousarray(data, dtype=np.float64)


def _as_state(res: Reservoir, r0) -> np.ndarray:
    if r0 is None:
        return np.zeros(res.n_nodes)
    r = np.ascontiguousarray(r0, dtype=np.float64).reshape(-1)
    if r.shape[0] != res.n_nodes:
        raise ValueError(f"state has {r.shape[0]} entries, reservoir has {res.n_nodes} nodes")
    return r


def _kernel_args(res: Reservoir):
    A = res.A
    return A.indptr, A.indices, A.data, np.ascontiguousarray(res.B), res.c, float(res.leakage)


def drive_open_loop(res: Reservoir, r0: Optional[np.ndarray], inputs: Union[Series, np.ndarray]) -> np.ndarray:
    """Drive ``res`` with ``inputs`` from state ``r0`` (zero if None).

    Returns an ``(n_steps, n_nodes)`` array; row ``k`` is the state after
    consuming input rows ``0..k``.
    """
    u = _as_inputs(inputs)
    if u.shape[1] != res.n_inputs:
        raise ValueError(f"inputs have {u.shape[1]} components, reservoir expects {res.n_inputs}")
    return _drive_kernel(*_kernel_args(res), _as_state(res, r0), u)


def drive_final_states(res: Reservoir, cues: np.ndarray) -> np.ndarray:
    """Final states after driving from zero with each cue, batched.

    ``cues`` has shape ``(n_cues, n_steps, n_inputs)``; the result is
    ``(n_cues, n_nodes)``. Each column of the batch is computed with
    element-wise operations only, so a cue's result does not depend on what
    else is in the batch.
    """
    cues = np.asarray(cues, dtype=np.float64)
    if cues.ndim != 3 or cues.shape[2] != res.n_inputs:
        raise ValueError(f"cues must have shape (n, steps, {res.n_inputs}), got {cues.shape}")
    n_cues, n_steps, _ = cues.shape
    leak = res.leakage
    R = np.zeros((res.n_nodes, n_cues))
    bias = res.c[:, None]
    for t in range(n_steps):
        pre = res.A @ R
        for m in range(res.n_inputs):
            pre += res.B[:, m:m + 1] * cues[None, :, t, m]
        pre += bias
        R = (1.0 - leak) * R + leak * np.tanh(pre)
    return np.ascontiguousarray(R.T)


class RidgeAccumulator:
    """Accumulates normal equations ``sum x x^T`` and ``sum y x^T`` in call order.

    ``solve(alpha)`` returns ``W = Y X^T (X X^T + alpha * count * I)^-1``.
    """

    def __init__(self, n_features: int, n_targets: int):
        self.gram = np.zeros((n_features, n_features))
        self.cross = np.zeros((n_targets, n_features))
        self.count = 0

    def add(self, features: np.ndarray, targets: np.ndarray) -> None:
        """Add rows of ``features`` (n, n_features) with matching ``targets`` (n, n_targets)."""
        if features.shape[0] != targets.shape[0]:
            raise ValueError("features and targets need the same number of rows")
        self.gram += features.T @ features
        self.cross += targets.T @ features
        self.count += features.shape[0]

    def solve(self, alpha: float) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no fitting pairs accumulated")
        G = self.gram + (alpha * self.count) * np.eye(self.gram.shape[0])
        try:
            factor = scipy.linalg.cho_factor(G, lower=True, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise RidgeSingularError(
                "regularized Gram matrix is not positive definite; use alpha > 0"
            ) from exc
        return scipy.linalg.cho_solve(factor, self.cross.T).T


def fitting_pairs(states: np.ndarray, series: np.ndarray, n_trans: int) -> Tuple[np.ndarray, np.ndarray]:
    """Features and targets ``(r(n dt), u(n dt))`` for ``n`` in ``n_trans+1 .. N-1``."""
    return states[n_trans:-1], series[n_trans + 1:]


def train_output_layer(
    res: Reservoir, training: Series, n_trans: int, alpha: float, r0: Optional[np.ndarray] = None
) -> Tuple[TrainedModel, np.ndarray]:
    """Fit ``W_out`` by ridge regression after a transient of ``n_trans`` pairs.

    Returns the model and the full open-loop state trajectory (from a zero
    initial state unless ``r0`` is given), which later serves as the source of
    cold-start vectors. The number of fitted pairs is
    ``n_fit = N_train - n_trans - 1``.
    """
    if training.n_steps <= n_trans + 1:
        raise ValueError(f"training series of {training.n_steps} steps too short for n_trans={n_trans}")
    if n_trans < 0:
        raise ValueError("n_trans must be non-negative")
    states = drive_open_loop(res, r0, training)
    acc = RidgeAccumulator(res.n_nodes, training.n_sys)
    acc.add(*fitting_pairs(states, training.data, n_trans))
    model = TrainedModel(acc.solve(alpha), res.hash, float(alpha), acc.count)
    return model, states


def _check_model(res: Reservoir, model: TrainedModel) -> None:
    if model.reservoir_hash != res.hash:
        raise ValueError(
            f"model was trained on reservoir {model.reservoir_hash}, not {res.hash}"
        )
    if model.n_out != res.n_inputs or model.n_nodes != res.n_nodes:
        raise ValueError(
            f"model shape {model.w_out.shape} incompatible with reservoir "
            f"({res.n_inputs} inputs, {res.n_nodes} nodes)"
        )


def _closed_loop(res: Reservoir, model: TrainedModel, r_init, n_steps: int):
    _check_model(res, model)
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    return _closed_loop_kernel(*_kernel_args(res), np.ascontiguousarray(model.w_out),
                               _as_state(res, r_init), int(n_steps))


def forecast_closed_loop(
    res: Reservoir, model: TrainedModel, r_init: Optional[np.ndarray], n_steps: int, dt: float = 1.0
) -> Forecast:
    """Run the reservoir autonomously, feeding each prediction back as input.

    ``r_init`` is the state that produces the first prediction, so row 0 of
    the result is ``W_out @ r_init``; subsequent rows follow from alternating
    ``r <- update(r, u_hat)`` and ``u_hat <- W_out r``.
    """
    preds, _, diverged = _closed_loop(res, model, r_init, n_steps)
    return Forecast(preds, dt, bool(diverged))


def synchronize_then_forecast(
    res: Reservoir,
    model: TrainedModel,
    r_init: Optional[np.ndarray],
    sync: Series,
    n_steps: int,
) -> Forecast:
    """Drive open-loop with ``sync`` from ``r_init``, then close the loop.

    The first prediction is for the step immediately after the last sync row.
    """
    if sync.n_steps < 1:
        raise ValueError("sync signal must have at least one step")
    _check_model(res, model)
    states = drive_open_loop(res, r_init, sync)
    return forecast_closed_loop(res, model, states[-1], n_steps, sync.dt)
