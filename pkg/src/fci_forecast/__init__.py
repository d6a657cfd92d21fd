"""Day-ahead forecasting with future contextual information (FCI).

Encoder-decoder transformers, linear baselines, a synthetic railway-style
generator, evaluation reports and an experiment CLI.
"""
from .data import Normalizer, SeriesFrame, detrend, load_csv, make_windows, split_by_date, window_origins
from .errors import ForecastError
from .model import Batch, ForecastTransformer, ModelConfig, build_model
from .synthetic import ScheduleConfig, generate
from .training import TrainConfig, grad_check, train

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "ForecastError",
    "ForecastTransformer",
    "ModelConfig",
    "Normalizer",
    "ScheduleConfig",
    "SeriesFrame",
    "TrainConfig",
    "build_model",
    "detrend",
    "generate",
    "grad_check",
    "load_csv",
    "make_windows",
    "split_by_date",
    "train",
    "window_origins",
]
