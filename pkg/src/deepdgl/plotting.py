"""Static SVG plots of forecasts against ground truth."""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
from matplotlib.figure import Figure

logger = logging.getLogger(__name__)


def plot_forecast(
    history: np.ndarray,
    forecast: np.ndarray,
    path: Union[str, Path],
    truth: Optional[np.ndarray] = None,
    start: int = 0,
    title: str = "",
) -> Path:
    """Write one SVG: the input window, the forecast and (optionally) the actual values.

    ``start`` is the time index of the first input step.
    """
    history = np.asarray(history, dtype=np.float64)
    forecast = np.asarray(forecast, dtype=np.float64)
    t_in = np.arange(start, start + history.shape[0])
    t_out = np.arange(t_in[-1] + 1, t_in[-1] + 1 + forecast.shape[0])

    fig = Figure(figsize=(8, 3))
    ax = fig.add_subplot()
    ax.plot(t_in, history, color="0.3", linewidth=1.0, label="input")
    if truth is not None:
        ax.plot(t_out, np.asarray(truth, dtype=np.float64), color="tab:blue", label="actual")
    ax.plot(t_out, forecast, color="tab:orange", linestyle="--", label="forecast")
    ax.axvline(t_in[-1] + 0.5, color="0.7", linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize="small")
    fig.tight_layout()

    path = Path(path)
    fig.savefig(path, format="svg")
    logger.debug("Wrote %s", path)
    return path
