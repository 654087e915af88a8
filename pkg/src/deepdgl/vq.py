"""Vector quantization against a shared codebook.

The encoder output ``z`` is replaced by its nearest codebook row ``e_i``. The
lookup is not differentiable, so the backward pass hands the gradient arriving
at the quantized sequence to ``z`` unchanged, and the codebook is trained
through :func:`vq_loss` instead.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from deepdgl.errors import MaintenanceError, ShapeError

logger = logging.getLogger(__name__)

# Rows per chunk of the exact distance computation
_DISTANCE_CHUNK = 4096


class _StraightThrough(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z: torch.Tensor, z_q: torch.Tensor) -> torch.Tensor:  # type: ignore[override]
        return z_q.clone()

    @staticmethod
    def backward(ctx, grad: torch.Tensor):  # type: ignore[override]
        return grad, None


def straight_through(z: torch.Tensor, z_q: torch.Tensor) -> torch.Tensor:
    """Value of ``z_q``; derivative of identity with respect to ``z``, zero for ``z_q``."""
    if z.shape != z_q.shape:
        raise ShapeError(f"Shapes differ: {tuple(z.shape)} and {tuple(z_q.shape)}")
    return _StraightThrough.apply(z, z_q)


@torch.no_grad()
def nearest_codes(z: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """Index of the Euclidean-nearest row per vector; ties go to the lowest index."""
    flat = z.reshape(-1, z.shape[-1])
    indices = torch.empty(flat.shape[0], dtype=torch.long, device=z.device)
    for start in range(0, flat.shape[0], _DISTANCE_CHUNK):
        chunk = flat[start : start + _DISTANCE_CHUNK]
        dist = (chunk.unsqueeze(1) - codebook.unsqueeze(0)).pow(2).sum(-1)
        indices[start : start + _DISTANCE_CHUNK] = dist.argmin(dim=1)
    return indices.reshape(z.shape[:-1])


def quantize(z: torch.Tensor, codebook: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Selected codebook rows (differentiable w.r.t. the codebook) and their indices."""
    if z.shape[-1] != codebook.shape[1]:
        raise ShapeError(
            f"Codebook width is {codebook.shape[1]}, got inputs of width {z.shape[-1]}"
        )
    indices = nearest_codes(z, codebook)
    return F.embedding(indices, codebook), indices


def vq_loss(z: torch.Tensor, z_q: torch.Tensor, gamma: float = 0.2) -> torch.Tensor:
    """``||sg(z) - z_q||^2 + gamma * ||z - sg(z_q)||^2``.

    Summed over time and features, averaged over the batch axis (inputs with
    fewer than three axes count as one sample). The first term only reaches the
    codebook, the second only reaches ``z``.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be greater than or equal to 0, got {gamma}")
    batch = z.shape[0] if z.dim() >= 3 else 1
    codebook_term = (z.detach() - z_q).pow(2).sum() / batch
    commitment = (z - z_q.detach()).pow(2).sum() / batch
    return codebook_term + gamma * commitment


def codebook_usage(indices: torch.Tensor, size: int) -> tuple[torch.Tensor, float]:
    """Per-row selection counts and the perplexity of the code distribution."""
    counts = torch.bincount(indices.reshape(-1), minlength=size)
    total = counts.sum().item()
    if total == 0:
        return counts, 0.0
    probs = counts.double() / total
    nonzero = probs[probs > 0]
    return counts, math.exp(float(-(nonzero * nonzero.log()).sum()))


@dataclass(frozen=True)
class QuantizeResult:
    quantized: torch.Tensor  # straight-through output, value == codes
    codes: torch.Tensor  # selected rows, gradient flows to the codebook
    indices: torch.Tensor


class VectorQuantizer(nn.Module):
    """Codebook ``[F, d]`` with usage bookkeeping.

    Usage counters only change in training mode, so inference leaves every
    buffer untouched.
    """

    def __init__(self, size: int, dim: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        if size < 1:
            raise ValueError(f"Codebook size must be at least 1, got {size}")
        init = torch.randn(size, dim, generator=generator) / math.sqrt(dim)
        self.codebook = nn.Parameter(init)
        self.register_buffer("usage_counts", torch.zeros(size, dtype=torch.long))
        self.register_buffer("steps_since_use", torch.zeros(size, dtype=torch.long))

    @property
    def size(self) -> int:
        return int(self.codebook.shape[0])

    @property
    def dim(self) -> int:
        return int(self.codebook.shape[1])

    @torch.no_grad()
    def record_usage(self, indices: torch.Tensor) -> None:
        counts = torch.bincount(indices.reshape(-1), minlength=self.size)
        self.usage_counts += counts
        self.steps_since_use.copy_(
            torch.where(counts > 0, torch.zeros_like(counts), self.steps_since_use + 1)
        )

    def forward(self, z: torch.Tensor) -> QuantizeResult:
        codes, indices = quantize(z, self.codebook)
        if self.training:
            self.record_usage(indices)
        return QuantizeResult(quantized=straight_through(z, codes), codes=codes, indices=indices)


@torch.no_grad()
def reset_dead_codes(
    book: VectorQuantizer,
    recent_outputs: torch.Tensor,
    patience: int,
    generator: Optional[torch.Generator] = None,
) -> list[int]:
    """Replace rows unused for ``patience`` batches by random recent encoder outputs.

    Other rows stay bitwise unchanged. Returns the reset row indices.

    Raises:
        MaintenanceError: a reset is due but ``recent_outputs`` is empty.
    """
    if patience < 1:
        raise ValueError(f"patience must be greater than or equal to 1, got {patience}")
    dead = torch.nonzero(book.steps_since_use >= patience).flatten()
    if dead.numel() == 0:
        return []
    pool = recent_outputs.reshape(-1, book.dim)
    if pool.shape[0] == 0:
        raise MaintenanceError(
            f"{dead.numel()} codebook rows are due for reset but no encoder outputs were given"
        )
    picks = torch.randint(pool.shape[0], (dead.numel(),), generator=generator)
    book.codebook[dead] = pool[picks].to(book.codebook.dtype)
    book.steps_since_use[dead] = 0
    book.usage_counts[dead] = 0
    logger.debug("Reset %d dead codebook rows: %s", dead.numel(), dead.tolist())
    return [int(i) for i in dead]
