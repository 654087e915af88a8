"""Training loop, checkpoints, evaluation protocols and error metrics."""

from deepdgl.training.checkpoint import Checkpoint
from deepdgl.training.evaluation import (
    evaluate_inductive,
    evaluate_transductive,
    evaluate_windows,
    forecast_windows,
)
from deepdgl.training.loop import (
    EpochRecord,
    Trainer,
    horizontal_blocks,
    learning_rate_at,
    train,
    vertical_blocks,
    write_training_curve,
)
from deepdgl.training.metrics import MetricsReport, metrics

__all__ = [
    "Checkpoint",
    "EpochRecord",
    "MetricsReport",
    "Trainer",
    "evaluate_inductive",
    "evaluate_transductive",
    "evaluate_windows",
    "forecast_windows",
    "horizontal_blocks",
    "learning_rate_at",
    "metrics",
    "train",
    "vertical_blocks",
    "write_training_curve",
]
