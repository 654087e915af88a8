"""Dataset ingestion, windowing, splitting and synthetic panels."""

from deepdgl.data.batching import WindowBatch, collate
from deepdgl.data.collection import (
    SeriesCollection,
    describe,
    load_covariates,
    load_csv,
    phase_covariates,
    write_csv,
)
from deepdgl.data.synthetic import SyntheticPanel, SyntheticSpec, generate_synthetic
from deepdgl.data.windows import (
    DatasetSplits,
    WindowSample,
    denormalize,
    make_windows,
    normalize,
    split,
    window_count,
)

__all__ = [
    "DatasetSplits",
    "SeriesCollection",
    "SyntheticPanel",
    "SyntheticSpec",
    "WindowBatch",
    "WindowSample",
    "collate",
    "denormalize",
    "describe",
    "generate_synthetic",
    "load_covariates",
    "load_csv",
    "make_windows",
    "normalize",
    "phase_covariates",
    "split",
    "window_count",
    "write_csv",
]
