"""Forecast error metrics in original units.

Every metric is computed per window over its ``tau`` steps and then averaged
over windows. Denominators are floored at :data:`EPSILON`.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd

from deepdgl.errors import ShapeError

EPSILON = 1e-8


@dataclass(frozen=True)
class MetricsReport:
    """Scalar MAPE/WAPE/SMAPE plus per-horizon-step breakdowns of length ``tau``."""

    mape: float
    wape: float
    smape: float
    n_windows: int
    mae_by_step: np.ndarray
    mape_by_step: np.ndarray
    wape_by_step: np.ndarray
    smape_by_step: np.ndarray
    labels: dict[str, str] = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return int(self.mae_by_step.shape[0])

    def with_labels(self, **labels: str) -> "MetricsReport":
        return MetricsReport(
            mape=self.mape,
            wape=self.wape,
            smape=self.smape,
            n_windows=self.n_windows,
            mae_by_step=self.mae_by_step,
            mape_by_step=self.mape_by_step,
            wape_by_step=self.wape_by_step,
            smape_by_step=self.smape_by_step,
            labels={**self.labels, **labels},
        )

    def as_dict(self) -> dict[str, Any]:
        return {
            **self.labels,
            "mape": self.mape,
            "wape": self.wape,
            "smape": self.smape,
            "n_windows": self.n_windows,
        }

    def write_csv(self, path: Union[str, Path]) -> None:
        """``metric,value`` rows, then ``horizon_step,mae`` rows."""
        summary = pd.DataFrame(
            {"metric": list(self.as_dict()), "value": list(self.as_dict().values())}
        )
        steps = pd.DataFrame(
            {"horizon_step": np.arange(1, self.horizon + 1), "mae": self.mae_by_step}
        )
        with open(path, "w", encoding="utf-8", newline="") as handle:
            summary.to_csv(handle, index=False, float_format="%.17g")
            steps.to_csv(handle, index=False, float_format="%.17g")


def _as_matrix(values: Any, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 1:
        array = array[np.newaxis, :]
    if array.ndim != 2:
        raise ShapeError(f"{name} must be a [windows x tau] matrix, got shape {array.shape}")
    return array


def metrics(
    targets: Any, preds: Any, labels: Optional[dict[str, str]] = None
) -> MetricsReport:
    """MAPE, WAPE and SMAPE of ``preds`` against ``targets``, both ``[windows, tau]``.

    Raises:
        ShapeError: the two matrices differ in shape or are empty.
    """
    y = _as_matrix(targets, "targets")
    y_hat = _as_matrix(preds, "preds")
    if y.shape != y_hat.shape:
        raise ShapeError(f"targets {y.shape} and preds {y_hat.shape} differ in shape")
    if y.size == 0:
        raise ShapeError("Cannot score an empty set of windows")

    error = np.abs(y - y_hat)
    ape = error / np.maximum(np.abs(y), EPSILON)
    sape = 2.0 * error / np.maximum(np.abs(y + y_hat), EPSILON)
    window_wape = error.sum(axis=1) / np.maximum(np.abs(y).sum(axis=1), EPSILON)
    step_wape = error.sum(axis=0) / np.maximum(np.abs(y).sum(axis=0), EPSILON)

    return MetricsReport(
        mape=float(ape.mean(axis=1).mean()),
        wape=float(window_wape.mean()),
        smape=float(sape.mean(axis=1).mean()),
        n_windows=int(y.shape[0]),
        mae_by_step=error.mean(axis=0),
        mape_by_step=ape.mean(axis=0),
        wape_by_step=step_wape,
        smape_by_step=sape.mean(axis=0),
        labels=dict(labels or {}),
    )
