"""Experiment configuration: TOML loading, preset merging and validation."""

from __future__ import annotations

import copy
import dataclasses
import enum
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..baselines import parse_method
from ..core import MapperTargets
from ..systems import GAUSS_B, PERIOD_WINDOW

__all__ = [
    "ConfigError",
    "Experiment",
    "SystemKind",
    "ReservoirSection",
    "Family",
    "LibrarySection",
    "TestSection",
    "NoiseSection",
    "OutputSection",
    "ExperimentConfig",
    "load_config",
    "config_from_dict",
    "resolve_config",
]


class ConfigError(ValueError):
    """Raised for any inconsistency found before compute starts."""


class Experiment(str, enum.Enum):
    LOGISTIC_BIFURCATION = "LogisticBifurcation"
    DUAL_MAP_BIFURCATION = "DualMapBifurcation"
    LORENZ_GRID = "LorenzGrid"
    LORENZ_COLD_START_ONLY = "LorenzColdStartOnly"
    LORENZ_VALID_TIME_VS_NTEST = "LorenzValidTimeVsNtest"
    NOISE_SWEEP = "NoiseSweep"


class SystemKind(str, enum.Enum):
    LOGISTIC = "logistic"
    GAUSS = "gauss"
    LORENZ = "lorenz"

    @property
    def is_map(self) -> bool:
        return self is not SystemKind.LORENZ

    @property
    def n_sys(self) -> int:
        return 3 if self is SystemKind.LORENZ else 1

    @property
    def param_names(self) -> Tuple[str, ...]:
        return {"logistic": ("mu",), "gauss": ("a",), "lorenz": ("omega_t", "v1")}[self.value]


Range = Tuple[float, float]


@dataclass(frozen=True)
class ReservoirSection:
    n_nodes: int
    mean_in_degree: float
    spectral_radius: float
    input_strength: float
    bias_strength: float
    leakage: float
    alpha: float


@dataclass(frozen=True)
class Family:
    """A group of systems of one kind.

    In the library, ``count`` members are drawn uniformly from the parameter
    ranges. In the test set, ``points`` evenly spaced values span each range
    (one entry per parameter; a fixed parameter is a zero-width range).
    """

    system: SystemKind
    count: int = 0
    points: Tuple[int, ...] = ()
    mu: Optional[Range] = None
    a: Optional[Range] = None
    b: float = GAUSS_B
    omega_t: Optional[Range] = None
    v1: Optional[Range] = None

    def ranges(self) -> List[Range]:
        return [getattr(self, name) for name in self.system.param_names]


@dataclass(frozen=True)
class LibrarySection:
    families: Tuple[Family, ...]
    n_train: int
    n_trans: int
    n_discard: int
    n_fit: Optional[int] = None
    stride: int = 1

    @property
    def n_members(self) -> int:
        return sum(f.count for f in self.families)


@dataclass(frozen=True)
class TestSection:
    families: Tuple[Family, ...]
    forecast_start: int


@dataclass(frozen=True)
class NoiseSection:
    test: Tuple[float, ...] = (0.0,)
    train: Tuple[str, ...] = ("clean",)


@dataclass(frozen=True)
class OutputSection:
    bifurcation: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: Experiment
    forecaster: ReservoirSection
    signal_mapper: ReservoirSection
    library: LibrarySection
    test: TestSection
    methods: Tuple[str, ...]
    n_test: Tuple[int, ...]
    n_for: int
    eval_discard: int = 0
    seed: int = 0
    replicates: int = 1
    threads: int = 1
    mapper_targets: MapperTargets = MapperTargets.FULL
    observation: Optional[Tuple[int, ...]] = None
    noise: NoiseSection = field(default_factory=NoiseSection)
    output: OutputSection = field(default_factory=OutputSection)
    preset: Optional[str] = None

    @property
    def system_kinds(self) -> List[SystemKind]:
        return list(dict.fromkeys(f.system for f in self.library.families))

    @property
    def n_sys(self) -> int:
        return self.library.families[0].system.n_sys

    @property
    def observed(self) -> Tuple[int, ...]:
        return self.observation if self.observation is not None else tuple(range(self.n_sys))

    @property
    def fully_observed(self) -> bool:
        return len(self.observed) == self.n_sys

    @property
    def family_label(self) -> str:
        """Experiment family used by the train-on-test transient schedule."""
        return "map" if self.library.families[0].system.is_map else "lorenz"

    def noise_combos(self) -> List[Tuple[float, float]]:
        """``(sigma_test, sigma_train)`` pairs evaluated, in canonical order."""
        out = []
        for s in self.noise.test:
            for mode in self.noise.train:
                if mode == "clean":
                    out.append((s, 0.0))
                elif s > 0:
                    out.append((s, s))
        return out

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# -- building from plain dicts ----------------------------------------------

def _fields(cls) -> Dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _check_keys(cls, data: dict, where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table, got {type(data).__name__}")
    unknown = sorted(set(data) - set(_fields(cls)))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    missing = [n for n, f in _fields(cls).items()
               if n not in data and f.default is dataclasses.MISSING
               and f.default_factory is dataclasses.MISSING]
    if missing:
        raise ConfigError(f"{where}: missing key(s) {', '.join(missing)}")


def _range(value, where: str) -> Range:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value), float(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        lo, hi = float(value[0]), float(value[1])
        if lo > hi:
            raise ConfigError(f"{where}: empty range [{lo}, {hi}]")
        return lo, hi
    raise ConfigError(f"{where}: expected a number or [low, high], got {value!r}")


def _int(value, where: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {value}")
    return value


def _float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _family(data: dict, where: str) -> Family:
    _check_keys(Family, data, where)
    try:
        system = SystemKind(data["system"])
    except ValueError:
        raise ConfigError(f"{where}: unknown system {data['system']!r}") from None
    kw: Dict[str, Any] = {"system": system}
    if "count" in data:
        kw["count"] = _int(data["count"], f"{where}.count")
    if "points" in data:
        pts = data["points"]
        pts = [pts] if isinstance(pts, int) else list(pts)
        kw["points"] = tuple(_int(p, f"{where}.points", 1) for p in pts)
    if "b" in data:
        kw["b"] = _float(data["b"], f"{where}.b")
    for name in ("mu", "a", "omega_t", "v1"):
        if name in data:
            if name not in system.param_names:
                raise ConfigError(f"{where}: parameter {name!r} does not apply to {system.value}")
            kw[name] = _range(data[name], f"{where}.{name}")
    for name in system.param_names:
        if name not in kw:
            raise ConfigError(f"{where}: {system.value} family needs parameter {name!r}")
    return Family(**kw)


def _families(items, where: str) -> Tuple[Family, ...]:
    if not isinstance(items, list) or not items:
        raise ConfigError(f"{where}: expected a non-empty list of families")
    return tuple(_family(d, f"{where}[{k}]") for k, d in enumerate(items))


def _reservoir(data: dict, where: str) -> ReservoirSection:
    _check_keys(ReservoirSection, data, where)
    return ReservoirSection(
        n_nodes=_int(data["n_nodes"], f"{where}.n_nodes", 1),
        **{k: _float(data[k], f"{where}.{k}") for k in
           ("mean_in_degree", "spectral_radius", "input_strength", "bias_strength", "leakage", "alpha")},
    )


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build and validate a config from a fully merged plain dict."""
    data = copy.deepcopy(data)
    _check_keys(ExperimentConfig, data, "config")
    try:
        experiment = Experiment(data["experiment"])
    except ValueError:
        known = ", ".join(e.value for e in Experiment)
        raise ConfigError(f"unknown experiment {data['experiment']!r}; known: {known}") from None

    lib = data["library"]
    _check_keys(LibrarySection, lib, "library")
    library = LibrarySection(
        families=_families(lib["families"], "library.families"),
        n_train=_int(lib["n_train"], "library.n_train", 2),
        n_trans=_int(lib["n_trans"], "library.n_trans"),
        n_discard=_int(lib["n_discard"], "library.n_discard"),
        n_fit=None if lib.get("n_fit") is None else _int(lib["n_fit"], "library.n_fit", 1),
        stride=_int(lib.get("stride", 1), "library.stride", 1),
    )
    test = data["test"]
    _check_keys(TestSection, test, "test")
    test_section = TestSection(_families(test["families"], "test.families"),
                               _int(test["forecast_start"], "test.forecast_start", 1))
    noise = data.get("noise", {})
    _check_keys(NoiseSection, noise, "noise")
    noise_section = NoiseSection(
        tuple(_float(s, "noise.test") for s in noise.get("test", [0.0])),
        tuple(str(m) for m in noise.get("train", ["clean"])),
    )
    output = data.get("output", {})
    _check_keys(OutputSection, output, "output")
    n_test = data["n_test"]
    n_test = [n_test] if isinstance(n_test, int) else n_test
    try:
        targets = MapperTargets(data.get("mapper_targets", "full"))
    except ValueError:
        raise ConfigError(f"unknown mapper_targets {data.get('mapper_targets')!r}") from None
    obs = data.get("observation")
    cfg = ExperimentConfig(
        experiment=experiment,
        forecaster=_reservoir(data["forecaster"], "forecaster"),
        signal_mapper=_reservoir(data["signal_mapper"], "signal_mapper"),
        library=library,
        test=test_section,
        methods=tuple(str(m) for m in data["methods"]),
        n_test=tuple(_int(n, "n_test", 1) for n in n_test),
        n_for=_int(data["n_for"], "n_for", 1),
        eval_discard=_int(data.get("eval_discard", 0), "eval_discard"),
        seed=_int(data.get("seed", 0), "seed"),
        replicates=_int(data.get("replicates", 1), "replicates", 1),
        threads=_int(data.get("threads", 1), "threads", 1),
        mapper_targets=targets,
        observation=None if obs is None else tuple(_int(k, "observation") for k in obs),
        noise=noise_section,
        output=OutputSection(bool(output.get("bifurcation", False))),
        preset=data.get("preset"),
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    lib = cfg.library
    kinds = cfg.system_kinds
    n_sys = {k.n_sys for k in kinds} | {f.system.n_sys for f in cfg.test.families}
    if len(n_sys) != 1:
        raise ConfigError("library and test families mix systems of different dimension")
    for f in lib.families:
        if f.count < 1:
            raise ConfigError(f"library family {f.system.value} needs count >= 1")
    for f in cfg.test.families:
        if len(f.points) != len(f.system.param_names):
            raise ConfigError(
                f"test family {f.system.value} needs points for each of {f.system.param_names}"
            )
    if any(k.is_map for k in kinds) and lib.n_train < PERIOD_WINDOW:
        raise ConfigError(f"map libraries need n_train >= {PERIOD_WINDOW} to screen out periodic members")
    if lib.n_fit is not None and lib.n_fit != lib.n_train - lib.n_trans - 1:
        raise ConfigError(
            f"library.n_fit = {lib.n_fit} but n_train - n_trans - 1 = {lib.n_train - lib.n_trans - 1}"
        )
    if lib.n_train - lib.n_trans - 1 < 1:
        raise ConfigError("library.n_train must exceed n_trans + 1")
    if max(cfg.n_test) > lib.n_train - lib.n_trans:
        raise ConfigError("n_test longer than the usable part of the library signals")
    if cfg.test.forecast_start < max(cfg.n_test):
        raise ConfigError("test.forecast_start must be at least max(n_test)")
    if cfg.eval_discard + 2 > cfg.n_for:
        raise ConfigError("n_for must exceed eval_discard + 1")
    if cfg.observation is not None:
        if not cfg.observation or any(k >= cfg.n_sys for k in cfg.observation):
            raise ConfigError(f"observation {list(cfg.observation)} invalid for a {cfg.n_sys}-component system")
    if cfg.mapper_targets is MapperTargets.COLD_START_ONLY and lib.n_members != 1:
        raise ConfigError("mapper_targets = cold_start_only needs a single-member library")
    if not cfg.methods:
        raise ConfigError("no methods requested")
    for m in cfg.methods:
        try:
            name, k = parse_method(m)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if name == "zero_start_library_k" and k >= lib.n_members:
            raise ConfigError(f"{m}: library has only {lib.n_members} members")
        if name in ("nearest", "interp") and len(kinds) != 1:
            raise ConfigError(f"{m} needs library members of a single system kind")
        if name == "interp" and lib.n_members < 2 and kinds[0].is_map:
            raise ConfigError("interp needs at least two library members")
        if name in ("backward_const", "train_search") and lib.n_members != 1:
            raise ConfigError(f"{m} needs a single-member library")
        if name == "metafors_zero_start" and cfg.mapper_targets is MapperTargets.COLD_START_ONLY:
            raise ConfigError("metafors_zero_start is undefined when the mapper learns only cold starts")
    if len(set(cfg.methods)) != len(cfg.methods):
        raise ConfigError("duplicate method identifiers")
    for mode in cfg.noise.train:
        if mode not in ("clean", "matched"):
            raise ConfigError(f"noise.train entries must be 'clean' or 'matched', got {mode!r}")
    if any(s < 0 for s in cfg.noise.test):
        raise ConfigError("noise levels must be non-negative")
    if not cfg.noise_combos():
        raise ConfigError("noise settings select no (test, train) combination")


# -- loading -----------------------------------------------------------------

def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(data: dict, preset: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Merge preset defaults, file contents and overrides, then validate.

    The preset named by ``preset`` (or by the ``preset`` key in ``data``)
    supplies defaults for the experiment; keys in ``data`` replace them, and
    ``overrides`` (from the command line) replace both.
    """
    from .presets import preset_dict

    data = dict(data)
    overrides = dict(overrides or {})
    if "experiment" not in data and "experiment" not in overrides:
        raise ConfigError("config: missing key 'experiment'")
    name = preset or overrides.get("preset") or data.get("preset")
    merged: dict = {}
    if name is not None:
        experiment = overrides.get("experiment", data.get("experiment"))
        merged = preset_dict(experiment, name)
    merged = _merge(_merge(merged, data), overrides)
    if name is not None:
        merged["preset"] = name
    return config_from_dict(merged)


def load_config(path: Union[str, Path], preset: Optional[str] = None,
                overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a TOML config, or the config echo inside a run manifest (``.json``)."""
    path = Path(path)
    try:
        if path.suffix == ".json":
            with open(path) as fh:
                data = json.load(fh)
            data = data.get("config", data)
        else:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return resolve_config(data, preset, overrides)
