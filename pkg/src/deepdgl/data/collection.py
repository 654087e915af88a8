"""Multi-series panels and their CSV representation.

Values CSV::

    series_id,v0,v1,...,v{n_steps-1}

Covariates CSV::

    t,c0,c1,...

Both files are UTF-8 with decimal-point floats and no missing cells.
"""

import math
import re
import warnings
from collections.abc import Sequence
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from deepdgl.errors import (
    CovariateMismatchError,
    CSVParseError,
    DuplicateSeriesIdError,
    NonNumericCellError,
    RaggedRowError,
)

PathLike = Union[str, Path]

# Covariate period used when a collection carries no covariates of its own
DEFAULT_PERIODS = {"1 hour": 24, "1 day": 7}


def _frozen_array(value: Any, ndim: int, name: str) -> np.ndarray:
    array = np.array(value, dtype=np.float64, copy=True)
    if array.ndim != ndim:
        raise ValueError(f"{name} must be a {ndim}-d array, got shape {array.shape}")
    array.setflags(write=False)
    return array


def phase_covariates(n_steps: int, period: int, start: int = 0) -> np.ndarray:
    """Sinusoidal phase pair ``(sin, cos)`` of the absolute step index.

    Steps are reduced modulo ``period`` before the trigonometric call, so rows
    ``t`` and ``t + period`` are bitwise identical.
    """
    if period < 2:
        raise ValueError(f"Period must be greater than or equal to 2, got {period}")
    steps = (np.arange(start, start + n_steps) % period).astype(np.float64)
    angle = 2.0 * math.pi * steps / period
    return np.stack([np.sin(angle), np.cos(angle)], axis=1)


class SeriesCollection(BaseModel):
    """Immutable panel of ``n_series`` aligned series with optional time covariates."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray
    series_ids: tuple[str, ...]
    granularity: str = "1 hour"
    covariates: Optional[np.ndarray] = None

    @field_validator("values", mode="before")
    @classmethod
    def _coerce_values(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 2, "values")

    @field_validator("covariates", mode="before")
    @classmethod
    def _coerce_covariates(cls, value: Any) -> Optional[np.ndarray]:
        if value is None:
            return None
        return _frozen_array(value, 2, "covariates")

    @field_validator("series_ids", mode="before")
    @classmethod
    def _coerce_ids(cls, value: Any) -> tuple[str, ...]:
        return tuple(str(v) for v in value)

    @model_validator(mode="after")
    def _check_panel(self) -> "SeriesCollection":
        n_series, n_steps = self.values.shape
        if n_series < 1:
            raise ValueError("Collection must contain at least 1 series, got 0")
        if n_steps < 1:
            raise ValueError("Collection must contain at least 1 time step, got 0")
        if not np.all(np.isfinite(self.values)):
            row, col = np.argwhere(~np.isfinite(self.values))[0]
            raise ValueError(f"Non-finite value at series {row}, step {col}")
        if len(self.series_ids) != n_series:
            raise ValueError(
                f"Expected {n_series} series ids, got {len(self.series_ids)}"
            )
        if len(set(self.series_ids)) != n_series:
            raise ValueError("Series ids must be unique")
        if self.covariates is not None:
            if self.covariates.shape[0] != n_steps:
                raise ValueError(
                    f"Covariates must have {n_steps} rows, got {self.covariates.shape[0]}"
                )
            if not np.all(np.isfinite(self.covariates)):
                raise ValueError("Covariates contain non-finite entries")
        return self

    @property
    def n_series(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_steps(self) -> int:
        return int(self.values.shape[1])

    @property
    def default_period(self) -> int:
        return DEFAULT_PERIODS.get(self.granularity, 24)

    def covariate_matrix(self, period: Optional[int] = None) -> np.ndarray:
        """Covariates of the panel, or a synthesized phase pair when it has none."""
        if self.covariates is not None:
            return self.covariates
        warnings.warn(
            "deepdgl: collection has no covariates; using a sinusoidal phase pair with "
            f"period {period or self.default_period}.",
            UserWarning,
            stacklevel=2,
        )
        return phase_covariates(self.n_steps, period or self.default_period)

    def subset(self, indices: Sequence[int]) -> "SeriesCollection":
        """Collection restricted to the given series, in the given order."""
        idx = list(indices)
        return SeriesCollection(
            values=self.values[idx],
            series_ids=[self.series_ids[i] for i in idx],
            granularity=self.granularity,
            covariates=self.covariates,
        )

    def index_of(self, series_id: str) -> int:
        try:
            return self.series_ids.index(series_id)
        except ValueError:
            raise KeyError(f"Unknown series_id '{series_id}'") from None


def _read_text_frame(path: PathLike) -> pd.DataFrame:
    # The header is read as a data row: a row longer than the first line is then
    # a parse error, never an implicit index column.
    try:
        raw = pd.read_csv(
            path,
            header=None,
            index_col=False,
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
        )
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise RaggedRowError(
            "row has more cells than the header",
            path=path,
            line=int(match.group(1)) if match else None,
        ) from exc
    except pd.errors.EmptyDataError as exc:
        raise CSVParseError("file is empty", path=path, line=1) from exc
    frame = raw.iloc[1:].reset_index(drop=True)
    frame.columns = [str(name) for name in raw.iloc[0]]
    return frame


def _numeric_block(frame: pd.DataFrame, path: PathLike) -> np.ndarray:
    """Parse every cell as float, naming the first offending line on failure."""
    raw = frame.to_numpy(dtype=object)
    missing = pd.isna(raw)
    if missing.any():
        row = int(np.argwhere(missing)[0][0])
        raise RaggedRowError("row has fewer cells than the header", path=path, line=row + 2)
    parsed = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(parsed)
    if bad.any():
        row, col = (int(i) for i in np.argwhere(bad)[0])
        raise NonNumericCellError(
            f"cell '{raw[row, col]}' in column '{frame.columns[col]}' is not a finite number",
            path=path,
            line=row + 2,
        )
    return parsed


def _check_header(columns: Sequence[str], first: str, prefix: str, path: PathLike) -> None:
    if not columns or columns[0] != first:
        raise CSVParseError(f"header must start with '{first}'", path=path, line=1)
    for i, name in enumerate(columns[1:]):
        if name != f"{prefix}{i}":
            raise CSVParseError(
                f"header column {i + 1} must be '{prefix}{i}', got '{name}'", path=path, line=1
            )


def load_csv(
    values_path: PathLike,
    covariates_path: Optional[PathLike] = None,
    granularity: str = "1 hour",
) -> SeriesCollection:
    """Load a panel from the values CSV and an optional covariates CSV.

    Row order of the values file is preserved.

    Raises:
        RaggedRowError: a row's cell count differs from the header.
        NonNumericCellError: a value cell is not a finite float.
        DuplicateSeriesIdError: a series_id appears twice.
        CovariateMismatchError: covariate rows do not match the value columns.
    """
    frame = _read_text_frame(values_path)
    _check_header(list(frame.columns), "series_id", "v", values_path)
    if len(frame) == 0:
        raise CSVParseError("file has no series rows", path=values_path, line=2)

    ids = frame["series_id"]
    duplicated = ids.duplicated()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise DuplicateSeriesIdError(
            f"series_id '{ids.iloc[row]}' already used", path=values_path, line=row + 2
        )
    values = _numeric_block(frame.iloc[:, 1:], values_path)

    covariates = None
    if covariates_path is not None:
        covariates = load_covariates(covariates_path, values.shape[1])

    return SeriesCollection(
        values=values,
        series_ids=ids.tolist(),
        granularity=granularity,
        covariates=covariates,
    )


def load_covariates(path: PathLike, n_steps: int, start: int = 0) -> np.ndarray:
    """Covariate rows ``t = start .. start + n_steps - 1`` from a ``t,c0,...`` CSV.

    Raises:
        CovariateMismatchError: wrong row count, or ``t`` does not count up from ``start``.
    """
    frame = _read_text_frame(path)
    _check_header(list(frame.columns), "t", "c", path)
    block = _numeric_block(frame, path)
    if len(block) != n_steps:
        # The first line that is missing or surplus
        line = min(len(block), n_steps) + 2
        raise CovariateMismatchError(
            f"expected {n_steps} covariate rows, got {len(block)}", path=path, line=line
        )
    steps = block[:, 0]
    wrong = np.flatnonzero(steps != np.arange(start, start + n_steps))
    if wrong.size:
        row = int(wrong[0])
        raise CovariateMismatchError(
            f"t must increase by one from {start}, got {steps[row]:g} at row {row}",
            path=path,
            line=row + 2,
        )
    return block[:, 1:]


def write_csv(
    collection: SeriesCollection,
    values_path: PathLike,
    covariates_path: Optional[PathLike] = None,
) -> None:
    """Write a collection back in the format :func:`load_csv` reads."""
    frame = pd.DataFrame(
        collection.values, columns=[f"v{i}" for i in range(collection.n_steps)]
    )
    frame.insert(0, "series_id", list(collection.series_ids))
    frame.to_csv(values_path, index=False, float_format="%.17g")

    if covariates_path is not None and collection.covariates is not None:
        cov = pd.DataFrame(
            collection.covariates,
            columns=[f"c{i}" for i in range(collection.covariates.shape[1])],
        )
        cov.insert(0, "t", np.arange(collection.n_steps))
        cov.to_csv(covariates_path, index=False, float_format="%.17g")


def describe(collection: SeriesCollection) -> dict[str, Any]:
    """Summary statistics of a panel (series count, length, granularity, value range)."""
    return {
        "n_series": collection.n_series,
        "n_steps": collection.n_steps,
        "granularity": collection.granularity,
        "n_covariates": 0 if collection.covariates is None else collection.covariates.shape[1],
        "min": float(collection.values.min()),
        "max": float(collection.values.max()),
        "mean": float(collection.values.mean()),
    }
