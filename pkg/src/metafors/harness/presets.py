"""Built-in experiment presets.

``desk`` presets run in minutes on one core; they thin test grids and
replicate counts but keep reservoir sizes and training lengths. ``paper``
presets use the full resolutions and are long-running.
"""

from __future__ import annotations

import copy
from typing import Dict, List, Tuple

__all__ = ["PRESET_NAMES", "RESERVOIRS", "preset_dict", "list_presets"]

PRESET_NAMES = ("desk", "paper")


def _res(n, rho, sigma, leak, alpha):
    return {"n_nodes": n, "mean_in_degree": 3.0, "spectral_radius": rho, "input_strength": sigma,
            "bias_strength": 0.5, "leakage": leak, "alpha": alpha}


# Forecaster and signal-mapper hyperparameters per testbed.
RESERVOIRS = {
    "logistic": (_res(500, 0.2, 2.5, 0.2, 1e-6), _res(1000, 0.9, 2.5, 0.1, 1e-8)),
    "dual": (_res(500, 0.2, 4.0, 0.2, 1e-6), _res(1000, 0.9, 4.0, 0.1, 1e-8)),
    "lorenz": (_res(500, 0.9, 0.1, 0.1, 1e-6), _res(1000, 0.9, 0.1, 0.1, 1e-8)),
}

_MAP_LIBRARY = {"n_train": 1000, "n_trans": 50, "n_discard": 1000, "stride": 1}
_LORENZ_LIBRARY = {"n_train": 6000, "n_trans": 1000, "n_discard": 1000, "stride": 1}
_LORENZ_NINE = [{"system": "lorenz", "count": 9, "omega_t": [0.75, 1.25], "v1": [7.5, 12.5]}]
_N_TEST_SWEEP = [1, 2, 5, 10, 20, 50, 100, 200]
_BASELINES_2D = ["metafors", "metafors_zero_start", "nearest", "interp", "multitask", "train_on_test"]


def _lorenz_grid(n):
    return [{"system": "lorenz", "omega_t": [0.7, 1.3], "v1": [7.0, 13.0], "points": [n, n]}]


def _base(testbed: str) -> dict:
    f, sm = RESERVOIRS[testbed]
    return {"forecaster": copy.deepcopy(f), "signal_mapper": copy.deepcopy(sm), "seed": 0, "threads": 1}


def _logistic(points, replicates):
    return {
        **_base("logistic"),
        "experiment": "LogisticBifurcation",
        "replicates": replicates,
        "methods": ["metafors", "metafors_zero_start", "interp", "multitask", "train_on_test"],
        "n_test": [5],
        "n_for": 1000,
        "eval_discard": 500,
        "library": {**_MAP_LIBRARY, "families": [{"system": "logistic", "count": 5, "mu": [3.7, 3.8]}]},
        "test": {"forecast_start": 1000,
                 "families": [{"system": "logistic", "mu": [2.9, 4.0], "points": [points]}]},
    }


def _dual(points, replicates):
    return {
        **_base("dual"),
        "experiment": "DualMapBifurcation",
        "replicates": replicates,
        "methods": ["metafors", "metafors_zero_start", "multitask", "train_on_test"],
        "n_test": [10],
        "n_for": 1000,
        "eval_discard": 500,
        "library": {**_MAP_LIBRARY, "families": [
            {"system": "logistic", "count": 5, "mu": [3.6, 3.9]},
            {"system": "gauss", "count": 5, "a": [6.0, 12.0], "b": 0.5},
        ]},
        "test": {"forecast_start": 1000, "families": [
            {"system": "logistic", "mu": [3.4, 4.0], "points": [points]},
            {"system": "gauss", "a": [4.0, 14.0], "b": 0.5, "points": [points]},
            {"system": "logistic", "mu": 3.61, "points": [1]},
            {"system": "logistic", "mu": 3.92, "points": [1]},
            {"system": "gauss", "a": 8.0, "b": 0.5, "points": [1]},
            {"system": "gauss", "a": 11.0, "b": 0.5, "points": [1]},
        ]},
    }


def _lorenz(experiment, grid, replicates, **extra):
    out = {
        **_base("lorenz"),
        "experiment": experiment,
        "replicates": replicates,
        "n_for": 3000,
        "eval_discard": 0,
        "library": {**_LORENZ_LIBRARY, "families": copy.deepcopy(_LORENZ_NINE)},
        "test": {"forecast_start": 1200, "families": _lorenz_grid(grid)},
    }
    out.update(extra)
    return out


def _lorenz_grid_preset(grid, replicates):
    return _lorenz("LorenzGrid", grid, replicates, methods=list(_BASELINES_2D), n_test=[200])


def _valid_time_vs_ntest(grid, replicates):
    return _lorenz("LorenzValidTimeVsNtest", grid, replicates, methods=list(_BASELINES_2D),
                   n_test=list(_N_TEST_SWEEP), observation=[2])


def _cold_start_only(grid, replicates):
    out = _lorenz("LorenzColdStartOnly", grid, replicates,
                  methods=["metafors", "zero_start_library_0", "backward_const", "train_search"],
                  n_test=list(_N_TEST_SWEEP), observation=[2], mapper_targets="cold_start_only")
    out["library"]["families"] = [{"system": "lorenz", "count": 1, "omega_t": 1.0, "v1": 10.0}]
    out["test"]["families"] = [{"system": "lorenz", "omega_t": 1.0, "v1": 10.0, "points": [grid, grid]}]
    return out


def _noise(grid, replicates, n_test):
    return _lorenz("NoiseSweep", grid, replicates, methods=["metafors"], n_test=n_test,
                   noise={"test": [0.0, 0.01, 0.1], "train": ["clean", "matched"]})


_PRESETS = {
    ("LogisticBifurcation", "desk"): (lambda: _logistic(100, 3), "100 mu values, 3 replicates"),
    ("LogisticBifurcation", "paper"): (lambda: _logistic(500, 10), "500 mu values, 10 replicates"),
    ("DualMapBifurcation", "desk"): (lambda: _dual(50, 3), "50 test values per map, 3 replicates"),
    ("DualMapBifurcation", "paper"): (lambda: _dual(500, 10), "500 test values per map, 10 replicates"),
    ("LorenzGrid", "desk"): (lambda: _lorenz_grid_preset(9, 3), "9x9 grid, 3 replicates"),
    ("LorenzGrid", "paper"): (lambda: _lorenz_grid_preset(30, 1), "30x30 grid"),
    ("LorenzValidTimeVsNtest", "desk"): (lambda: _valid_time_vs_ntest(9, 3), "9x9 grid, 3 replicates"),
    ("LorenzValidTimeVsNtest", "paper"): (lambda: _valid_time_vs_ntest(25, 1), "25x25 grid"),
    ("LorenzColdStartOnly", "desk"): (lambda: _cold_start_only(9, 3), "81 test signals, 3 replicates"),
    ("LorenzColdStartOnly", "paper"): (lambda: _cold_start_only(25, 1), "625 test signals"),
    ("NoiseSweep", "desk"): (lambda: _noise(9, 3, [20]), "9x9 grid, N_test=20, 3 replicates"),
    ("NoiseSweep", "paper"): (lambda: _noise(25, 1, list(_N_TEST_SWEEP)), "25x25 grid, full N_test sweep"),
}


def preset_dict(experiment: str, name: str) -> dict:
    from .config import ConfigError

    try:
        factory, _ = _PRESETS[(experiment, name)]
    except KeyError:
        raise ConfigError(f"no preset {name!r} for experiment {experiment!r}") from None
    return factory()


def list_presets() -> List[Tuple[str, str, str]]:
    """``(experiment, preset, description)`` for every built-in preset."""
    return [(e, p, desc) for (e, p), (_, desc) in _PRESETS.items()]


def presets_by_experiment() -> Dict[str, List[str]]:
    out: Dict[str, List[str]] = {}
    for e, p, _ in list_presets():
        out.setdefault(e, []).append(p)
    return out
