"""The two-level meta-learning scheme.

Level one trains one output layer per long library signal on a shared
forecaster reservoir and keeps each synchronized state trajectory. Every
length-``n_test`` window of a long signal then becomes a training triplet:
the window itself (the cue), the forecaster state at the window start (its
cold-start vector) and the flattened output layer of its source signal.

Level two drives a separate signal-mapper reservoir with each cue from zero
and ridge-regresses the final mapper state onto ``[cold_start, W_flat]``.
At prediction time a new cue is mapped to a cold-start vector and an output
layer; the forecaster starts from that vector, synchronizes on the cue, and
closes the loop.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import storage
from .reservoir import (
    Forecast,
    Reservoir,
    RidgeAccumulator,
    TrainedModel,
    drive_final_states,
    synchronize_then_forecast,
    train_output_layer,
)
from .systems import Series

__all__ = [
    "MapperTargets",
    "Triplet",
    "MetaLibrary",
    "SignalMapper",
    "TailoredForecaster",
    "flatten_model",
    "unflatten_model",
    "build_meta_library",
    "train_signal_mapper",
    "train_signal_mappers",
    "infer_tailored_forecaster",
    "infer_tailored_forecasters",
    "metafors_forecast",
]

CHUNK = 2048


class MapperTargets(str, enum.Enum):
    FULL = "full"
    MODEL_ONLY = "model_only"
    COLD_START_ONLY = "cold_start_only"


def flatten_model(model: Union[TrainedModel, np.ndarray]) -> np.ndarray:
    """Row-major flattening of ``W_out`` (output component outermost)."""
    w = model.w_out if isinstance(model, TrainedModel) else np.asarray(model)
    return np.array(w, dtype=np.float64).reshape(-1)


def unflatten_model(flat: np.ndarray, n_out: int, n_nodes: int) -> np.ndarray:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.size != n_out * n_nodes:
        raise ValueError(f"flat model has {flat.size} entries, expected {n_out} x {n_nodes}")
    return flat.reshape(n_out, n_nodes).copy()


class Triplet(NamedTuple):
    short_signal: np.ndarray
    cold_start: np.ndarray
    flat_model: np.ndarray
    source_index: int
    start: int


@dataclass(frozen=True, eq=False)
class MetaLibrary:
    """Trained library members and the index of their short-signal triplets.

    Triplets are not materialized: ``index[k] = (i, j)`` names the window of
    long signal ``i`` starting at step ``j``, and :meth:`triplet` returns views
    into the stored signals and trajectories.
    """

    forecaster_hash: str
    long_signals: List[Series]
    models: List[TrainedModel]
    trajectories: List[np.ndarray]
    index: np.ndarray
    n_test: int
    n_trans: int
    stride: int = 1

    @property
    def n_members(self) -> int:
        return len(self.long_signals)

    @property
    def n_short(self) -> int:
        return self.index.shape[0]

    @property
    def n_sys(self) -> int:
        return self.long_signals[0].n_sys

    @property
    def n_nodes(self) -> int:
        return self.models[0].n_nodes

    def cold_start(self, i: int, j: int) -> np.ndarray:
        """Forecaster state at time ``j dt`` of long signal ``i``.

        Trajectory row ``j - 1`` is the state after consuming inputs
        ``0..j-1``; ``j = 0`` is the zero initial state.
        """
        if j == 0:
            return np.zeros(self.n_nodes)
        return self.trajectories[i][j - 1]

    def short_signal(self, i: int, j: int) -> np.ndarray:
        return self.long_signals[i].data[j:j + self.n_test]

    def triplet(self, k: int) -> Triplet:
        i, j = (int(v) for v in self.index[k])
        return Triplet(self.short_signal(i, j), self.cold_start(i, j),
                       flatten_model(self.models[i]), i, j)

    def triplets(self) -> Iterator[Triplet]:
        for k in range(self.n_short):
            yield self.triplet(k)

    def cues(self, rows: Optional[slice] = None) -> np.ndarray:
        """Stacked short signals, shape ``(n, n_test, n_sys)``."""
        idx = self.index if rows is None else self.index[rows]
        return np.stack([self.short_signal(i, j) for i, j in idx]) if len(idx) else \
            np.empty((0, self.n_test, self.n_sys))

    def member_hashes(self) -> List[str]:
        return [storage.array_digest(s.data, m.w_out) for s, m in zip(self.long_signals, self.models)]

    def save(self, path: Union[str, Path]) -> None:
        arrays = {"index": self.index}
        for i, (sig, model, traj) in enumerate(zip(self.long_signals, self.models, self.trajectories)):
            arrays[f"signal_{i}"] = sig.data
            arrays[f"w_out_{i}"] = model.w_out
            arrays[f"trajectory_{i}"] = traj
        meta = {
            "kind": "MetaLibrary",
            "forecaster_hash": self.forecaster_hash,
            "n_test": self.n_test,
            "n_trans": self.n_trans,
            "stride": self.stride,
            "dt": [s.dt for s in self.long_signals],
            "alpha": [m.alpha for m in self.models],
            "n_fit": [m.n_fit for m in self.models],
            "member_hashes": self.member_hashes(),
        }
        storage.write_container(path, arrays, meta)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MetaLibrary":
        arrays, meta = storage.read_container(path)
        if meta.get("kind") != "MetaLibrary":
            raise ValueError(f"{path}: not a MetaLibrary container")
        n = len(meta["member_hashes"])
        signals = [Series(arrays[f"signal_{i}"], meta["dt"][i]) for i in range(n)]
        models = [TrainedModel(arrays[f"w_out_{i}"], meta["forecaster_hash"], meta["alpha"][i],
                               meta["n_fit"][i]) for i in range(n)]
        lib = cls(meta["forecaster_hash"], signals, models,
                  [arrays[f"trajectory_{i}"] for i in range(n)], arrays["index"],
                  meta["n_test"], meta["n_trans"], meta["stride"])
        if lib.member_hashes() != meta["member_hashes"]:
            raise ValueError(f"{path}: member hashes do not match the manifest")
        return lib


def build_meta_library(
    forecaster: Reservoir,
    long_signals: Sequence[Series],
    n_trans: int,
    alpha_f: float,
    n_test: int,
    stride: int = 1,
) -> MetaLibrary:
    """Train the forecaster on every long signal and index all short windows.

    Windows start at every ``stride``-th step ``j`` from ``n_trans`` up to
    ``N_train - n_test``.
    """
    if not long_signals:
        raise ValueError("library needs at least one long signal")
    if n_test < 1 or stride < 1:
        raise ValueError("n_test and stride must be positive")
    n_sys = long_signals[0].n_sys
    models, trajectories, index = [], [], []
    for i, sig in enumerate(long_signals):
        if sig.n_sys != n_sys:
            raise ValueError(f"long signal {i} has {sig.n_sys} components, expected {n_sys}")
        if sig.n_steps < n_trans + n_test or sig.n_steps <= n_trans + 1:
            raise ValueError(
                f"long signal {i} has {sig.n_steps} steps; needs at least n_trans + n_test = "
                f"{n_trans + n_test}"
            )
        model, states = train_output_layer(forecaster, sig, n_trans, alpha_f)
        models.append(model)
        trajectories.append(states)
        starts = np.arange(n_trans, sig.n_steps - n_test + 1, stride)
        index.append(np.column_stack([np.full_like(starts, i), starts]))
    return MetaLibrary(forecaster.hash, list(long_signals), models, trajectories,
                       np.concatenate(index).astype(np.int64), n_test, n_trans, stride)


@dataclass(frozen=True, eq=False)
class SignalMapper:
    """Signal-mapper reservoir plus the linear map from its final state to targets."""

    reservoir: Reservoir
    w_sm: np.ndarray
    n_test: int
    n_sys: int
    n_forecaster: int
    alpha_sm: float
    targets: MapperTargets
    forecaster_hash: str
    fixed_model: Optional[TrainedModel] = None

    def __post_init__(self):
        self.w_sm.flags.writeable = False

    @property
    def n_outputs(self) -> int:
        return self.w_sm.shape[0]

    def save(self, path: Union[str, Path]) -> None:
        """Write the mapper; its reservoir goes to ``<path>.reservoir``."""
        path = Path(path)
        self.reservoir.save(path.with_name(path.name + ".reservoir"))
        arrays = {"w_sm": self.w_sm}
        if self.fixed_model is not None:
            arrays["fixed_w_out"] = self.fixed_model.w_out
        meta = {
            "kind": "SignalMapper",
            "n_test": self.n_test,
            "n_sys": self.n_sys,
            "n_forecaster": self.n_forecaster,
            "alpha_sm": self.alpha_sm,
            "targets": self.targets.value,
            "forecaster_hash": self.forecaster_hash,
            "reservoir_hash": self.reservoir.hash,
        }
        if self.fixed_model is not None:
            meta["fixed_alpha"] = self.fixed_model.alpha
            meta["fixed_n_fit"] = self.fixed_model.n_fit
        storage.write_container(path, arrays, meta)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SignalMapper":
        path = Path(path)
        arrays, meta = storage.read_container(path)
        if meta.get("kind") != "SignalMapper":
            raise ValueError(f"{path}: not a SignalMapper container")
        res = Reservoir.load(path.with_name(path.name + ".reservoir"))
        if res.hash != meta["reservoir_hash"]:
            raise ValueError(f"{path}: signal-mapper reservoir hash mismatch")
        fixed = None
        if "fixed_w_out" in arrays:
            fixed = TrainedModel(arrays["fixed_w_out"], meta["forecaster_hash"], meta["fixed_alpha"],
                                 meta["fixed_n_fit"])
        return cls(res, arrays["w_sm"], meta["n_test"], meta["n_sys"], meta["n_forecaster"],
                   meta["alpha_sm"], MapperTargets(meta["targets"]), meta["forecaster_hash"], fixed)


@dataclass(frozen=True, eq=False)
class TailoredForecaster:
    cold_start: np.ndarray
    model: TrainedModel


def _target_block(library: MetaLibrary, rows: np.ndarray, targets: MapperTargets) -> np.ndarray:
    parts = []
    if targets is not MapperTargets.MODEL_ONLY:
        parts.append(np.stack([library.cold_start(i, j) for i, j in rows]))
    if targets is not MapperTargets.COLD_START_ONLY:
        flats = [flatten_model(m) for m in library.models]
        parts.append(np.stack([flats[i] for i, _ in rows]))
    return np.hstack(parts)


def _check_mapper_inputs(sm_reservoir: Reservoir, library: MetaLibrary) -> None:
    if sm_reservoir.n_inputs != library.n_sys:
        raise ValueError(
            f"signal mapper takes {sm_reservoir.n_inputs} inputs, library signals have {library.n_sys}"
        )
    if library.n_short == 0:
        raise ValueError("library contains no short signals")


def train_signal_mappers(
    sm_reservoir: Reservoir,
    library: MetaLibrary,
    alpha_sm: float,
    targets: Sequence[Union[MapperTargets, str]],
    chunk_size: int = CHUNK,
) -> Dict[MapperTargets, SignalMapper]:
    """Train one signal mapper per target kind from a single pass over the cues.

    All mappers share the same final signal-mapper states, so driving the
    reservoir (the expensive part) happens once.
    """
    kinds = list(dict.fromkeys(MapperTargets(t) for t in targets))
    _check_mapper_inputs(sm_reservoir, library)
    if MapperTargets.COLD_START_ONLY in kinds and library.n_members != 1:
        raise ValueError("cold-start-only mapping needs a single-member library")
    n_f, n_sys = library.n_nodes, library.n_sys
    widths = {MapperTargets.FULL: n_f * (n_sys + 1),
              MapperTargets.MODEL_ONLY: n_f * n_sys,
              MapperTargets.COLD_START_ONLY: n_f}
    accs = {k: RidgeAccumulator(sm_reservoir.n_nodes, widths[k]) for k in kinds}
    for start in range(0, library.n_short, chunk_size):
        rows = library.index[start:start + chunk_size]
        states = drive_final_states(sm_reservoir, library.cues(slice(start, start + chunk_size)))
        for k, acc in accs.items():
            acc.add(states, _target_block(library, rows, k))
    fixed = library.models[0] if library.n_members == 1 else None
    return {
        k: SignalMapper(sm_reservoir, acc.solve(alpha_sm), library.n_test, n_sys, n_f, float(alpha_sm), k,
                        library.forecaster_hash, fixed if k is MapperTargets.COLD_START_ONLY else None)
        for k, acc in accs.items()
    }


def train_signal_mapper(
    sm_reservoir: Reservoir,
    library: MetaLibrary,
    alpha_sm: float,
    targets: Union[MapperTargets, str] = MapperTargets.FULL,
    chunk_size: int = CHUNK,
) -> SignalMapper:
    """Fit ``W_SM = P R^T (R R^T + alpha_sm N_short I)^-1`` over all triplets.

    ``R`` holds the final signal-mapper states (driven from zero by each cue)
    and ``P`` the targets: ``[cold_start; W_flat]`` for ``FULL``, only
    ``W_flat`` for ``MODEL_ONLY``, only ``cold_start`` for
    ``COLD_START_ONLY`` (single-member libraries, where the sole trained
    model is reused unchanged).
    """
    targets = MapperTargets(targets)
    return train_signal_mappers(sm_reservoir, library, alpha_sm, [targets], chunk_size)[targets]


def _split_outputs(sm: SignalMapper, out: np.ndarray) -> TailoredForecaster:
    n_f, n_sys = sm.n_forecaster, sm.n_sys
    if sm.targets is MapperTargets.FULL:
        cold, flat = out[:n_f], out[n_f:]
    elif sm.targets is MapperTargets.MODEL_ONLY:
        cold, flat = np.zeros(n_f), out
    else:
        return TailoredForecaster(out.copy(), sm.fixed_model)
    model = TrainedModel(unflatten_model(flat, n_sys, n_f), sm.forecaster_hash, float("nan"), 0)
    return TailoredForecaster(cold.copy(), model)


def _cue_array(sm: SignalMapper, cue: Union[Series, np.ndarray]) -> np.ndarray:
    data = cue.data if isinstance(cue, Series) else np.asarray(cue, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[0] != sm.n_test:
        raise ValueError(
            f"cue has {data.shape[0]} steps but the signal mapper was trained for n_test={sm.n_test}"
        )
    if data.shape[1] != sm.n_sys:
        raise ValueError(f"cue has {data.shape[1]} components, expected {sm.n_sys}")
    return data


def infer_tailored_forecasters(sm: SignalMapper, cues: Sequence[Union[Series, np.ndarray]]) -> List[TailoredForecaster]:
    """Batched :func:`infer_tailored_forecaster`."""
    if len(cues) == 0:
        return []
    batch = np.stack([_cue_array(sm, c) for c in cues])
    states = drive_final_states(sm.reservoir, batch)
    # Row-wise products keep each result independent of the batch it arrived in.
    return [_split_outputs(sm, sm.w_sm @ r) for r in states]


def infer_tailored_forecaster(sm: SignalMapper, cue: Union[Series, np.ndarray]) -> TailoredForecaster:
    """Map a cue to a cold-start vector and an output layer for the forecaster."""
    return infer_tailored_forecasters(sm, [cue])[0]


def metafors_forecast(forecaster: Reservoir, sm: SignalMapper, cue: Series, n_steps: int,
                      tailored: Optional[TailoredForecaster] = None) -> Forecast:
    """Cold-start the forecaster from the inferred state, sync on ``cue``, then forecast.

    The first prediction is for the step right after the cue ends. Pass
    ``tailored`` to reuse an inference computed in a batch.
    """
    if sm.forecaster_hash != forecaster.hash:
        raise ValueError("signal mapper was trained for a different forecaster reservoir")
    if tailored is None:
        tailored = infer_tailored_forecaster(sm, cue)
    return synchronize_then_forecast(forecaster, tailored.model, tailored.cold_start, cue, n_steps)
