"""Run a configured experiment end to end and write its result files.

Every random draw comes from a named substream of the root seed, and each
(test point, method) evaluation is a pure function of prebuilt artifacts, so
the output does not depend on the worker count or scheduling order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .. import __version__
from .._rng import derive_seed, substream
from ..baselines import (
    LabeledLibrary,
    backward_extrapolation_start,
    interpolated_forecaster_1d,
    interpolated_forecaster_2d,
    nearest_library_forecast,
    parse_method,
    train_multitask,
    train_on_test,
    training_data_search_start,
    zero_start_forecast,
)
from ..core import (
    MapperTargets,
    SignalMapper,
    build_meta_library,
    infer_tailored_forecasters,
    metafors_forecast,
    train_signal_mappers,
)
from ..metrics import autonomous_one_step_error, bifurcation_points, ks_distance, valid_time
from ..reservoir import Forecast, Reservoir, ReservoirSpec, build_reservoir, synchronize_then_forecast
from ..storage import array_digest
from ..systems import (
    DivergenceError,
    DomainEscapeError,
    LorenzParams,
    MapKind,
    MapParams,
    Series,
    TrueDynamics,
    add_observational_noise,
    chaotic_map_library,
    library_std,
    lorenz_trajectory,
    partial_observation,
    random_lorenz_state,
)
from .config import ExperimentConfig, ReservoirSection, SystemKind
from .results import PARAMS, ResultRow, write_results

__all__ = ["GroundTruthError", "TestPoint", "RunOutput", "test_points", "run_experiment"]

log = logging.getLogger(__name__)

STD_WINDOW_NOTE = "valid-time normalization uses the std of the truth over the forecast window"


class GroundTruthError(ArithmeticError):
    """A ground-truth trajectory diverged or left the map's domain."""


def _param_values(p: Union[MapParams, LorenzParams]) -> Dict[str, float]:
    if isinstance(p, LorenzParams):
        return {"omega_t": p.omega_t, "v1": p.v1}
    return {"mu": p.mu} if p.kind is MapKind.LOGISTIC else {"a": p.a}


def _label(p: Union[MapParams, LorenzParams]) -> np.ndarray:
    return np.array(list(_param_values(p).values()))


@dataclass(frozen=True)
class TestPoint:
    index: int
    system: SystemKind
    params: Union[MapParams, LorenzParams]

    @property
    def values(self) -> Dict[str, float]:
        return _param_values(self.params)

    @property
    def label(self) -> np.ndarray:
        return _label(self.params)


@dataclass
class RunOutput:
    out_dir: Path
    rows: List[ResultRow]
    manifest: dict
    files: Dict[str, Path] = field(default_factory=dict)


def _system_params(system: SystemKind, values: Sequence[float], b: float):
    if system is SystemKind.LOGISTIC:
        return MapParams.logistic(values[0])
    if system is SystemKind.GAUSS:
        return MapParams.gauss(values[0], b)
    return LorenzParams(omega_t=values[0], v1=values[1])


def test_points(cfg: ExperimentConfig) -> List[TestPoint]:
    """The test grid in canonical order (families in order, first parameter outermost)."""
    out = []
    for fam in cfg.test.families:
        axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(fam.ranges(), fam.points)]
        for values in np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes)):
            out.append(TestPoint(len(out), fam.system, _system_params(fam.system, values.tolist(), fam.b)))
    return out


# -- ground truth ----------------------------------------------------------------

def _library_signals(cfg: ExperimentConfig, seed: int):
    """Library parameters, labels and observed clean long signals for one replicate."""
    lib = cfg.library
    n_total = lib.n_discard + lib.n_train
    params, signals = [], []
    try:
        for fi, fam in enumerate(lib.families):
            if fam.system.is_map:
                kind = MapKind(fam.system.value)
                pairs = chaotic_map_library(kind, fam.ranges()[0], fam.count, derive_seed(seed, "library", fi),
                                            b=fam.b, n_total=n_total, n_discard=lib.n_discard)
                for p, s in pairs:
                    params.append(p)
                    signals.append(s)
            else:
                rng = substream(seed, "library", fi)
                (w_lo, w_hi), (v_lo, v_hi) = fam.ranges()
                for _ in range(fam.count):
                    p = LorenzParams(omega_t=rng.uniform(w_lo, w_hi), v1=rng.uniform(v_lo, v_hi))
                    params.append(p)
                    signals.append(lorenz_trajectory(p, random_lorenz_state(rng), n_total, lib.n_discard))
    except (DivergenceError, DomainEscapeError) as exc:
        raise GroundTruthError(f"library ground truth failed: {exc}") from exc
    observed = [partial_observation(s, cfg.observed) for s in signals]
    return params, np.array([_label(p) for p in params]), observed


def _test_signal(cfg: ExperimentConfig, seed: int, point: TestPoint) -> Series:
    rng = substream(seed, "test", point.index)
    n_total = cfg.test.forecast_start + cfg.n_for
    try:
        if isinstance(point.params, LorenzParams):
            traj = lorenz_trajectory(point.params, random_lorenz_state(rng), n_total)
        else:
            x0 = 0.0
            while not 0.0 < x0 < 1.0:
                x0 = rng.uniform(0.0, 1.0)
            traj = point.params.trajectory(x0, n_total)
    except (DivergenceError, DomainEscapeError) as exc:
        raise GroundTruthError(f"test point {point.index} ground truth failed: {exc}") from exc
    return partial_observation(traj, cfg.observed)


def _spec(section: ReservoirSection, n_inputs: int, seed: int) -> ReservoirSpec:
    return ReservoirSpec(section.n_nodes, section.mean_in_degree, section.spectral_radius,
                         section.input_strength, section.bias_strength, section.leakage, n_inputs, seed)


def _noise_key(sigma: float) -> str:
    return format(sigma, ".17g")


# -- evaluation --------------------------------------------------------------------

@dataclass
class _Context:
    cfg: ExperimentConfig
    replicate: int
    seed: int
    forecaster: Reservoir
    library: object
    labeled: LabeledLibrary
    multitask: object
    tailored: Dict[str, list]
    mapper: Optional[SignalMapper]
    n_test: int
    noise_test: float
    noise_train: float


def _forecast(ctx: _Context, method: str, k: int, point: TestPoint, cue: Series) -> Optional[Forecast]:
    cfg, F = ctx.cfg, ctx.forecaster
    n = cfg.n_for
    name, member = parse_method(method)
    if name == "metafors":
        return metafors_forecast(F, ctx.mapper, cue, n, ctx.tailored["metafors"][k])
    if name == "metafors_zero_start":
        return synchronize_then_forecast(F, ctx.tailored["metafors_zero_start"][k].model, None, cue, n)
    if name == "zero_start_library_k":
        return zero_start_forecast(F, ctx.library.models[member], cue, n)
    if name == "multitask":
        return zero_start_forecast(F, ctx.multitask, cue, n)
    if name == "train_on_test":
        if cue.n_steps < 2:
            return None
        return zero_start_forecast(F, train_on_test(F, cue, cfg.forecaster.alpha, cfg.family_label), cue, n)
    if name == "nearest":
        return nearest_library_forecast(F, ctx.labeled, point.label, cue, n)
    if name == "interp":
        if point.system.is_map:
            return interpolated_forecaster_1d(F, ctx.labeled, float(point.label[0]), cue, n)
        return interpolated_forecaster_2d(F, ctx.labeled, point.label, cue, n)
    if name == "backward_const":
        return backward_extrapolation_start(F, ctx.library.models[0], cue, n)
    if name == "train_search":
        return training_data_search_start(F, ctx.library, cue, n)
    raise AssertionError(method)


def _evaluate_point(ctx: _Context, k: int, point: TestPoint, cue: Series, truth: np.ndarray):
    cfg = ctx.cfg
    rows, timings, bif = [], [], []
    dynamics = TrueDynamics(point.params) if cfg.fully_observed else None
    if cfg.output.bifurcation and point.system.is_map:
        bif.append(("truth", truth[cfg.eval_discard:cfg.n_for, 0].copy()))
    for method in cfg.methods:
        t0 = time.perf_counter()
        f = _forecast(ctx, method, k, point, cue)
        if f is None:
            continue
        t_valid, censored = valid_time(f, truth, cue.dt)
        eps = autonomous_one_step_error(f, dynamics, cfg.eval_discard) if dynamics is not None else None
        escaped = ks = None
        if point.system.is_map:
            kept, escaped = bifurcation_points(f, cfg.eval_discard)
            ks = ks_distance(kept, truth[cfg.eval_discard:])
            if cfg.output.bifurcation:
                bif.append((method, kept))
        values = point.values
        rows.append(ResultRow(
            experiment=cfg.experiment.value, method=method, replicate=ctx.replicate, seed=ctx.seed,
            point=point.index, system=point.system.value,
            **{p: values.get(p) for p in PARAMS},
            n_test=ctx.n_test, noise_test=ctx.noise_test, noise_train=ctx.noise_train,
            t_valid=float(t_valid), censored=bool(censored), epsilon=eps, diverged=bool(f.diverged),
            escaped=escaped, ks=ks,
        ))
        timings.append(time.perf_counter() - t0)
    return rows, timings, bif


def _mapper_kinds(cfg: ExperimentConfig) -> Dict[str, MapperTargets]:
    kinds = {}
    if "metafors" in cfg.methods:
        kinds["metafors"] = cfg.mapper_targets
    if "metafors_zero_start" in cfg.methods:
        kinds["metafors_zero_start"] = MapperTargets.MODEL_ONLY
    return kinds


def _run_replicate(cfg: ExperimentConfig, r: int, points: List[TestPoint], pool):
    seed = derive_seed(cfg.seed, "replicate", r)
    t_start = time.perf_counter()
    _, labels, clean_signals = _library_signals(cfg, seed)
    n_in = len(cfg.observed)
    F = build_reservoir(_spec(cfg.forecaster, n_in, derive_seed(seed, "forecaster")))
    SM = build_reservoir(_spec(cfg.signal_mapper, n_in, derive_seed(seed, "signal-mapper")))
    tests = [_test_signal(cfg, seed, p) for p in points]
    fs = cfg.test.forecast_start
    sigma_lib = library_std(clean_signals)
    info = {
        "replicate": r,
        "seed": seed,
        "forecaster_hash": F.hash,
        "signal_mapper_hash": SM.hash,
        "library_signals": array_digest(*[s.data for s in clean_signals]),
        "test_signals": array_digest(*[t.data for t in tests]),
        "library_std": sigma_lib.tolist(),
        "libraries": [],
    }
    log.info("replicate %d: ground truth and reservoirs ready (%.1fs)", r, time.perf_counter() - t_start)
    mapper_kinds = _mapper_kinds(cfg)
    methods = {parse_method(m)[0] for m in cfg.methods}
    rows, timings, bif = [], [], []
    for noise_test, noise_train in cfg.noise_combos():
        if noise_train > 0:
            train_signals = [
                add_observational_noise(s, noise_train, sigma_lib,
                                        substream(seed, "train-noise", _noise_key(noise_train), i))
                for i, s in enumerate(clean_signals)
            ]
        else:
            train_signals = clean_signals
        prefixes = []
        for p, t in zip(points, tests):
            prefix = t[:fs]
            if noise_test > 0:
                prefix = add_observational_noise(
                    prefix, noise_test, sigma_lib, substream(seed, "test-noise", _noise_key(noise_test), p.index))
            prefixes.append(prefix)
        multitask = None
        if "multitask" in methods:
            multitask = train_multitask(F, train_signals, cfg.library.n_trans, cfg.forecaster.alpha)
        for n_test in cfg.n_test:
            t0 = time.perf_counter()
            library = build_meta_library(F, train_signals, cfg.library.n_trans, cfg.forecaster.alpha,
                                         n_test, cfg.library.stride)
            assert library.forecaster_hash == F.hash
            mappers = train_signal_mappers(SM, library, cfg.signal_mapper.alpha, list(mapper_kinds.values()))
            cues = [pre[fs - n_test:] for pre in prefixes]
            tailored = {m: infer_tailored_forecasters(mappers[kind], cues) for m, kind in mapper_kinds.items()}
            info["libraries"].append({
                "noise_test": noise_test, "noise_train": noise_train, "n_test": n_test,
                "n_short": library.n_short, "member_hashes": library.member_hashes(),
            })
            ctx = _Context(cfg, r, seed, F, library, LabeledLibrary(library, labels), multitask, tailored,
                           mappers.get(mapper_kinds.get("metafors")), n_test, noise_test, noise_train)
            log.info("replicate %d, n_test=%d, noise=(%g, %g): artifacts trained (%.1fs)",
                     r, n_test, noise_test, noise_train, time.perf_counter() - t0)

            def task(k, ctx=ctx, cues=cues):
                return _evaluate_point(ctx, k, points[k], cues[k], tests[k].data[fs:])

            for k, (pr, pt, pb) in enumerate(pool(task, range(len(points)))):
                rows.extend(pr)
                timings.extend(zip(pr, pt))
                bif.extend((pr[0].replicate, points[k], n_test, noise_test, noise_train, m, v) for m, v in pb)
    return rows, timings, bif, info


def _write_timings(path: Path, timings) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "replicate", "point", "n_test", "noise_test", "noise_train", "wall_time_s"])
        for row, sec in timings:
            w.writerow([row.method, row.replicate, row.point, row.n_test, repr(row.noise_test),
                        repr(row.noise_train), f"{sec:.6f}"])


def _write_bifurcation(path: Path, cfg: ExperimentConfig, bif) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "replicate", "point", "system", "param", "n_test", "noise_test", "noise_train",
                    "value"])
        for rep, point, n_test, nt, nr, method, values in bif:
            param = repr(float(point.label[0]))
            for v in values:
                w.writerow([method, rep, point.index, point.system.value, param, n_test, repr(nt), repr(nr),
                            repr(float(v))])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(cfg: ExperimentConfig, out_dir: Union[str, Path], threads: Optional[int] = None) -> RunOutput:
    """Run every replicate of ``cfg`` and write results to ``out_dir``.

    Files written: ``results.csv`` (deterministic), ``timings.csv`` (wall
    times, not deterministic), ``manifest.json`` (config echo plus seeds and
    hashes; pass it back to ``metafors run`` to reproduce the results) and,
    if enabled, ``bifurcation.csv``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    threads = cfg.threads if threads is None else threads
    points = test_points(cfg)
    rows, timings, bif, infos = [], [], [], []
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    pool = executor.map if executor is not None else map
    try:
        for r in range(cfg.replicates):
            rr, rt, rb, info = _run_replicate(cfg, r, points, pool)
            rows.extend(rr)
            timings.extend(rt)
            bif.extend(rb)
            infos.append(info)
    finally:
        if executor is not None:
            executor.shutdown()
    method_order = {m: i for i, m in enumerate(cfg.methods)}
    n_order = {n: i for i, n in enumerate(cfg.n_test)}
    combo_order = {c: i for i, c in enumerate(cfg.noise_combos())}
    rows.sort(key=lambda x: (x.replicate, combo_order[(x.noise_test, x.noise_train)], n_order[x.n_test],
                             x.point, method_order[x.method]))
    files = {"results": out_dir / "results.csv", "timings": out_dir / "timings.csv",
             "manifest": out_dir / "manifest.json"}
    write_results(files["results"], rows)
    _write_timings(files["timings"], timings)
    if cfg.output.bifurcation:
        files["bifurcation"] = out_dir / "bifurcation.csv"
        _write_bifurcation(files["bifurcation"], cfg, bif)
    manifest = {
        "package_version": __version__,
        "schema": 1,
        "config": cfg.to_dict(),
        "root_seed": cfg.seed,
        "replicates": infos,
        "notes": [STD_WINDOW_NOTE],
        "results_sha256": _sha256(files["results"]),
    }
    files["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return RunOutput(out_dir, rows, manifest, files)
