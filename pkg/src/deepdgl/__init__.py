"""Multi-series forecasting with disentangled global and local temporal patterns."""

__version__ = "0.3.0"

from deepdgl.config import ModelConfig, RunConfig, TrainConfig, parse_config
from deepdgl.data import (
    DatasetSplits,
    SeriesCollection,
    SyntheticSpec,
    WindowBatch,
    WindowSample,
    collate,
    generate_synthetic,
    load_csv,
    make_windows,
    split,
)
from deepdgl.model import DeepDGL, LossBreakdown, prediction_loss
from deepdgl.training import (
    Checkpoint,
    MetricsReport,
    evaluate_inductive,
    evaluate_transductive,
    metrics,
    train,
)

__all__ = [
    "Checkpoint",
    "DatasetSplits",
    "DeepDGL",
    "LossBreakdown",
    "MetricsReport",
    "ModelConfig",
    "RunConfig",
    "SeriesCollection",
    "SyntheticSpec",
    "TrainConfig",
    "WindowBatch",
    "WindowSample",
    "collate",
    "evaluate_inductive",
    "evaluate_transductive",
    "generate_synthetic",
    "load_csv",
    "make_windows",
    "metrics",
    "parse_config",
    "prediction_loss",
    "split",
    "train",
]
