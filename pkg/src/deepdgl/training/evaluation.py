"""Transductive and inductive evaluation protocols."""

import logging
from collections.abc import Sequence
from typing import Literal

import numpy as np

from deepdgl.data.batching import collate
from deepdgl.data.windows import DatasetSplits, WindowSample
from deepdgl.errors import EmptyWindowError, ProtocolError
from deepdgl.model import DeepDGL
from deepdgl.training.checkpoint import Checkpoint
from deepdgl.training.metrics import MetricsReport, metrics

logger = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 256


def forecast_windows(
    model: DeepDGL, windows: Sequence[WindowSample], batch_size: int = EVAL_BATCH_SIZE
) -> tuple[np.ndarray, np.ndarray]:
    """Raw targets and forecasts ``[windows, tau]`` in original units."""
    targets, preds = [], []
    for start in range(0, len(windows), batch_size):
        chunk = windows[start : start + batch_size]
        preds.append(model.forecast_batch(collate(chunk)).numpy())
        targets.append(np.stack([w.raw_target() for w in chunk]))
    return np.concatenate(targets), np.concatenate(preds)


def evaluate_windows(
    model: DeepDGL, windows: Sequence[WindowSample], **labels: str
) -> MetricsReport:
    if not windows:
        raise EmptyWindowError("No windows to evaluate")
    targets, preds = forecast_windows(model, windows)
    return metrics(targets, preds, labels={"variant": model.cfg.variant, **labels})


def evaluate_transductive(
    ckpt: Checkpoint, splits: DatasetSplits, group: Literal["val", "test"] = "test"
) -> MetricsReport:
    """Score every transductive window of ``group``; the checkpoint is not modified."""
    windows = splits.test_windows if group == "test" else splits.val_windows
    report = evaluate_windows(ckpt.build_model(), windows, mode="transductive", group=group)
    logger.info(
        "Transductive %s: MAPE=%.4f WAPE=%.4f SMAPE=%.4f over %d windows",
        group,
        report.mape,
        report.wape,
        report.smape,
        report.n_windows,
    )
    return report


def _check_inductive_protocol(
    ckpt: Checkpoint, splits: DatasetSplits, series: Sequence[int], windows: Sequence[WindowSample]
) -> None:
    trained = set(ckpt.manifest.get("split.transductive_series", splits.transductive_series))
    overlap = sorted(trained.intersection(series))
    if overlap:
        raise ProtocolError(f"Inductive series {overlap} were used in training")
    train_end = ckpt.manifest.get("split.train_end", splits.train_end)
    early = [w for w in windows if w.start < train_end]
    if early:
        raise ProtocolError(
            f"{len(early)} inductive windows start before the end of the training range "
            f"(step {train_end})"
        )


def evaluate_inductive(
    ckpt: Checkpoint, splits: DatasetSplits, group: Literal["val", "test"] = "test"
) -> MetricsReport:
    """Forecast series never trained on, with no parameter updates.

    Raises:
        ProtocolError: inductive series overlap the training series, or the
            model parameters changed while forecasting.
    """
    if group == "test":
        series, windows = splits.inductive_test_series, splits.inductive_test_windows
    else:
        series, windows = splits.inductive_val_series, splits.inductive_val_windows
    _check_inductive_protocol(ckpt, splits, series, windows)

    model = ckpt.build_model()
    before = Checkpoint.from_model(model).checksum()
    report = evaluate_windows(model, windows, mode="inductive", group=group)
    after = Checkpoint.from_model(model).checksum()
    if before != after:
        raise ProtocolError("Model parameters changed during inductive forecasting")

    logger.info(
        "Inductive %s: MAPE=%.4f WAPE=%.4f SMAPE=%.4f over %d windows of %d unseen series",
        group,
        report.mape,
        report.wape,
        report.smape,
        report.n_windows,
        len(series),
    )
    return report.with_labels(checksum=after)
