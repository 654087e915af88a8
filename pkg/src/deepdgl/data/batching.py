"""Stacking of window samples into tensors."""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import torch

from deepdgl.data.windows import WindowSample


@dataclass(frozen=True)
class WindowBatch:
    """A stack of ``B`` windows.

    Shapes: ``inputs [B, T]``, ``targets [B, tau]``, ``input_covariates [B, T, c]``,
    ``target_covariates [B, tau, c]``, ``series_index/norm_mean/norm_std [B]``.
    """

    inputs: torch.Tensor
    targets: torch.Tensor
    input_covariates: torch.Tensor
    target_covariates: torch.Tensor
    series_index: torch.Tensor
    norm_mean: torch.Tensor
    norm_std: torch.Tensor

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def n_distinct_series(self) -> int:
        return int(torch.unique(self.series_index).numel())

    def to(self, dtype: torch.dtype) -> "WindowBatch":
        return WindowBatch(
            inputs=self.inputs.to(dtype),
            targets=self.targets.to(dtype),
            input_covariates=self.input_covariates.to(dtype),
            target_covariates=self.target_covariates.to(dtype),
            series_index=self.series_index,
            norm_mean=self.norm_mean.to(torch.float64),
            norm_std=self.norm_std.to(torch.float64),
        )


def collate(samples: Sequence[WindowSample], dtype: torch.dtype = torch.float32) -> WindowBatch:
    """Stack samples; de-normalization stats stay in float64."""
    if not samples:
        raise ValueError("Cannot collate an empty list of windows")

    def stack(name: str) -> torch.Tensor:
        return torch.from_numpy(np.stack([getattr(s, name) for s in samples])).to(dtype)

    return WindowBatch(
        inputs=stack("input"),
        targets=stack("target"),
        input_covariates=stack("input_covariates"),
        target_covariates=stack("target_covariates"),
        series_index=torch.tensor([s.series_index for s in samples], dtype=torch.long),
        norm_mean=torch.tensor([s.norm_mean for s in samples], dtype=torch.float64),
        norm_std=torch.tensor([s.norm_std for s in samples], dtype=torch.float64),
    )
