"""Synthetic panels with known global/local structure.

Series ``i`` follows::

    x_i(t) = proto[g(i)](t) * (1 + a_i * s_i(t)) + b_i * t + eps_t

where ``proto`` is one of a few shared periodic shapes (the global patterns),
``g(i)`` assigns them round-robin, ``s_i`` is a slow series-specific sine
modulation with amplitude ``a_i`` (the local pattern), ``b_i`` a linear trend and
``eps`` Gaussian noise.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from faker import Faker
from pydantic import BaseModel, ConfigDict, Field

from deepdgl.data.collection import SeriesCollection, phase_covariates

# Harmonics mixed into each prototype shape
N_HARMONICS = 3
# Prototypes oscillate in [BASE_LEVEL - 1, BASE_LEVEL + 1] so percentage metrics stay finite
BASE_LEVEL = 2.0


class SyntheticSpec(BaseModel):
    """Parameters of :func:`generate_synthetic`."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_series: int = Field(default=40, ge=1)
    n_steps: int = Field(default=2000, ge=1)
    n_global_prototypes: int = Field(default=4, ge=1)
    period: int = Field(default=24, ge=2)
    local_amplitude: float = Field(default=0.5, ge=0.0)
    heterogeneous: bool = True
    trend_scale: float = Field(default=0.0, ge=0.0)
    noise_std: float = Field(default=0.05, ge=0.0)
    seed: int = 0


@dataclass(frozen=True)
class SyntheticPanel:
    """A generated collection together with its ground-truth prototype assignment."""

    collection: SeriesCollection
    assignments: np.ndarray

    def write_assignments(self, path: Union[str, Path]) -> None:
        pd.DataFrame(
            {
                "series_id": list(self.collection.series_ids),
                "prototype_index": self.assignments,
            }
        ).to_csv(path, index=False)


def _prototype_table(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """One period of every prototype, shape ``[n_global_prototypes, period]``."""
    phase = 2.0 * math.pi * np.arange(spec.period) / spec.period
    table = np.empty((spec.n_global_prototypes, spec.period))
    for g in range(spec.n_global_prototypes):
        shape = np.zeros(spec.period)
        for h in range(1, N_HARMONICS + 1):
            amplitude = rng.uniform(0.2, 1.0) / h
            offset = rng.uniform(0.0, 2.0 * math.pi)
            shape += amplitude * np.sin(h * phase + offset)
        peak = np.abs(shape).max()
        table[g] = BASE_LEVEL + (shape / peak if peak > 0 else shape)
    return table


def _series_ids(spec: SyntheticSpec) -> list[str]:
    fake = Faker()
    fake.seed_instance(spec.seed)
    return [
        f"syn{i:04d}_{fake.unique.lexify('??????', letters='abcdefghijklmnopqrstuvwxyz')}"
        for i in range(spec.n_series)
    ]


def generate_synthetic(spec: SyntheticSpec) -> SyntheticPanel:
    """Generate a panel; equal specs give bitwise-equal panels."""
    rng = np.random.default_rng(spec.seed)
    table = _prototype_table(spec, rng)
    assignments = np.arange(spec.n_series) % spec.n_global_prototypes

    t = np.arange(spec.n_steps)
    values = np.empty((spec.n_series, spec.n_steps))
    for i in range(spec.n_series):
        scale = rng.uniform(0.5, 1.5) if spec.heterogeneous else 1.0
        amplitude = spec.local_amplitude * scale
        # Modulation period is a whole multiple of the prototype period
        cycle = spec.period * int(rng.integers(3, 9))
        offset = rng.uniform(0.0, 2.0 * math.pi)
        slope = rng.uniform(-spec.trend_scale, spec.trend_scale)
        noise = rng.normal(0.0, 1.0, spec.n_steps) * spec.noise_std

        prototype = table[assignments[i]][t % spec.period]
        values[i] = prototype
        if amplitude > 0:
            modulation = np.sin(2.0 * math.pi * (t % cycle) / cycle + offset)
            values[i] = prototype * (1.0 + amplitude * modulation)
        if slope != 0:
            values[i] += slope * t
        if spec.noise_std > 0:
            values[i] += noise

    collection = SeriesCollection(
        values=values,
        series_ids=_series_ids(spec),
        granularity="1 hour",
        covariates=phase_covariates(spec.n_steps, spec.period),
    )
    return SyntheticPanel(collection=collection, assignments=assignments)
