"""Cold-starting and generalizing reservoir-computer forecasters from short signals.

A library of long time series trains one forecaster output layer per series;
a second reservoir, the signal mapper, learns to map short cue signals onto a
cold-start state and an output layer for the forecaster.
"""

__version__ = "0.1.0"

from .core import (
    MapperTargets,
    MetaLibrary,
    SignalMapper,
    TailoredForecaster,
    build_meta_library,
    infer_tailored_forecaster,
    infer_tailored_forecasters,
    metafors_forecast,
    train_signal_mapper,
    train_signal_mappers,
)
from .reservoir import (
    Forecast,
    Reservoir,
    ReservoirSpec,
    TrainedModel,
    build_reservoir,
    drive_open_loop,
    forecast_closed_loop,
    synchronize_then_forecast,
    train_output_layer,
)
from .systems import LorenzParams, MapKind, MapParams, Series

__all__ = [
    "MapperTargets",
    "MetaLibrary",
    "SignalMapper",
    "TailoredForecaster",
    "build_meta_library",
    "infer_tailored_forecaster",
    "infer_tailored_forecasters",
    "metafors_forecast",
    "train_signal_mapper",
    "train_signal_mappers",
    "Forecast",
    "Reservoir",
    "ReservoirSpec",
    "TrainedModel",
    "build_reservoir",
    "drive_open_loop",
    "forecast_closed_loop",
    "synchronize_then_forecast",
    "train_output_layer",
    "LorenzParams",
    "MapKind",
    "MapParams",
    "Series",
]
