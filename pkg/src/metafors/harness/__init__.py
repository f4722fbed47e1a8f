"""Config-driven experiment runner and CLI."""

from .config import ConfigError, Experiment, ExperimentConfig, config_from_dict, load_config, resolve_config
from .presets import list_presets, preset_dict
from .results import ResultRow, read_results, summarize, write_results, write_summary
from .runner import GroundTruthError, RunOutput, run_experiment, test_points

__all__ = [
    "ConfigError",
    "Experiment",
    "ExperimentConfig",
    "config_from_dict",
    "load_config",
    "resolve_config",
    "list_presets",
    "preset_dict",
    "ResultRow",
    "read_results",
    "summarize",
    "write_results",
    "write_summary",
    "GroundTruthError",
    "RunOutput",
    "run_experiment",
    "test_points",
]
