"""Sliding windows, per-window normalization and transductive/inductive splits."""

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from deepdgl.data.collection import SeriesCollection
from deepdgl.errors import EmptyWindowError, SplitError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class WindowSample:
    """One normalized (input, target) window of a single series.

    ``input`` and ``target`` are in normalized units; ``norm_mean`` and
    ``norm_std`` come from the raw input segment only.
    """

    series_index: int
    start: int
    input: np.ndarray
    target: np.ndarray
    input_covariates: np.ndarray
    target_covariates: np.ndarray
    norm_mean: float
    norm_std: float

    @property
    def end(self) -> int:
        """Exclusive step index just past the target."""
        return self.start + len(self.input) + len(self.target)

    def raw_input(self) -> np.ndarray:
        return denormalize(self.input, self.norm_mean, self.norm_std)

    def raw_target(self) -> np.ndarray:
        return denormalize(self.target, self.norm_mean, self.norm_std)


def normalize(segment: np.ndarray, mean: float, std: float) -> np.ndarray:
    return (np.asarray(segment, dtype=np.float64) - mean) / std


def denormalize(values: np.ndarray, mean: float, std: float) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * std + mean


def window_stats(segment: np.ndarray) -> tuple[float, float]:
    """Mean and floored population standard deviation of an input segment."""
    mean = float(np.mean(segment))
    std = float(np.std(segment))
    return mean, max(std, STD_FLOOR)


def window_count(n_steps: int, T: int, tau: int, stride: int) -> int:  # noqa: N803
    if n_steps < T + tau:
        return 0
    return (n_steps - T - tau) // stride + 1


def _check_window_args(T: int, tau: int, stride: int) -> None:  # noqa: N803
    for name, value in (("T", T), ("tau", tau), ("stride", stride)):
        if value < 1:
            raise ValueError(f"{name} must be greater than or equal to 1, got {value}")


def make_windows(
    collection: SeriesCollection,
    T: int,  # noqa: N803
    tau: int,
    stride: int = 1,
    *,
    series: Optional[list[int]] = None,
    min_start: int = 0,
    covariate_period: Optional[int] = None,
) -> list[WindowSample]:
    """Cut every full ``T + tau`` window, series-major then by start offset.

    Args:
        collection: Source panel.
        T: Input length.
        tau: Forecast horizon.
        stride: Step between consecutive start offsets.
        series: Restrict to these series indices (default: all).
        min_start: Skip windows starting before this step.
        covariate_period: Period of the synthesized phase covariates when the
            collection has none.

    Raises:
        EmptyWindowError: the series are shorter than ``T + tau``.
    """
    _check_window_args(T, tau, stride)
    if collection.n_steps < T + tau:
        raise EmptyWindowError(
            f"Series have {collection.n_steps} steps, need at least T + tau = {T + tau}"
        )

    covariates = collection.covariate_matrix(covariate_period)
    indices = range(collection.n_series) if series is None else series
    starts = np.arange(0, collection.n_steps - T - tau + 1, stride)
    starts = starts[starts >= min_start]

    samples: list[WindowSample] = []
    n_floored = 0
    for i in indices:
        segments = sliding_window_view(collection.values[i], T + tau)[starts]
        for start, segment in zip(starts.tolist(), segments):
            mean, std = window_stats(segment[:T])
            n_floored += std == STD_FLOOR
            samples.append(
                WindowSample(
                    series_index=int(i),
                    start=start,
                    input=normalize(segment[:T], mean, std),
                    target=normalize(segment[T:], mean, std),
                    input_covariates=covariates[start : start + T],
                    target_covariates=covariates[start + T : start + T + tau],
                    norm_mean=mean,
                    norm_std=std,
                )
            )
    if n_floored:
        warnings.warn(
            f"deepdgl: {n_floored} windows have a constant input segment; "
            f"their standard deviation was floored to {STD_FLOOR}.",
            UserWarning,
            stacklevel=2,
        )
    return samples


@dataclass(frozen=True)
class DatasetSplits:
    """Series groups and window sets of the transductive/inductive protocol."""

    transductive_series: tuple[int, ...]
    inductive_val_series: tuple[int, ...]
    inductive_test_series: tuple[int, ...]
    train_windows: tuple[WindowSample, ...]
    val_windows: tuple[WindowSample, ...]
    test_windows: tuple[WindowSample, ...]
    inductive_val_windows: tuple[WindowSample, ...]
    inductive_test_windows: tuple[WindowSample, ...]
    train_end: int
    T: int
    tau: int
    stride: int
    seed: int

    @property
    def train_offsets(self) -> tuple[int, ...]:
        return tuple(sorted({w.start for w in self.train_windows}))


def split_sizes(n_series: int) -> tuple[int, int, int]:
    """70/10/20 series group sizes, rounding in favour of the transductive group."""
    n_val = n_series // 10
    n_test = n_series * 2 // 10
    return n_series - n_val - n_test, n_val, n_test


def split(
    collection: SeriesCollection,
    seed: int,
    T: int = 72,  # noqa: N803
    tau: int = 24,
    stride: int = 1,
    covariate_period: Optional[int] = None,
) -> DatasetSplits:
    """Split series 70/10/20 at random and transductive windows 60/20/20 in time.

    Inductive windows whose time range intersects the transductive training
    range ``[0, train_end)`` are dropped.

    Raises:
        SplitError: fewer than 10 series, or too few windows for three
            chronological groups.
    """
    if collection.n_series < 10:
        raise SplitError(
            f"Need at least 10 series to fill all split groups, got {collection.n_series}"
        )
    _check_window_args(T, tau, stride)

    n_trans, n_val, _ = split_sizes(collection.n_series)
    order = np.random.default_rng(seed).permutation(collection.n_series)
    transductive = tuple(sorted(int(i) for i in order[:n_trans]))
    inductive_val = tuple(sorted(int(i) for i in order[n_trans : n_trans + n_val]))
    inductive_test = tuple(sorted(int(i) for i in order[n_trans + n_val :]))

    n_offsets = window_count(collection.n_steps, T, tau, stride)
    n_train_off = n_offsets * 6 // 10
    n_val_off = n_offsets * 2 // 10
    if min(n_train_off, n_val_off, n_offsets - n_train_off - n_val_off) < 1:
        raise SplitError(
            f"{n_offsets} window offsets cannot be split 60/20/20 into non-empty groups"
        )

    windows = make_windows(
        collection, T, tau, stride, series=list(transductive), covariate_period=covariate_period
    )
    offsets = [w.start for w in windows[:n_offsets]]
    val_start = offsets[n_train_off]
    test_start = offsets[n_train_off + n_val_off]
    train = tuple(w for w in windows if w.start < val_start)
    val = tuple(w for w in windows if val_start <= w.start < test_start)
    test = tuple(w for w in windows if w.start >= test_start)
    train_end = offsets[n_train_off - 1] + T + tau

    inductive = {}
    for name, group in (("val", inductive_val), ("test", inductive_test)):
        if collection.n_steps - train_end < T + tau:
            inductive[name] = ()
            continue
        inductive[name] = tuple(
            make_windows(
                collection,
                T,
                tau,
                stride,
                series=list(group),
                min_start=train_end,
                covariate_period=covariate_period,
            )
        )
    if not inductive["test"]:
        logger.warning("No inductive windows remain after excluding the training range")

    logger.info(
        "Split %d series into %d/%d/%d; windows train=%d val=%d test=%d "
        "inductive val=%d test=%d",
        collection.n_series,
        len(transductive),
        len(inductive_val),
        len(inductive_test),
        len(train),
        len(val),
        len(test),
        len(inductive["val"]),
        len(inductive["test"]),
    )
    return DatasetSplits(
        transductive_series=transductive,
        inductive_val_series=inductive_val,
        inductive_test_series=inductive_test,
        train_windows=train,
        val_windows=val,
        test_windows=test,
        inductive_val_windows=inductive["val"],
        inductive_test_windows=inductive["test"],
        train_end=train_end,
        T=T,
        tau=tau,
        stride=stride,
        seed=seed,
    )
