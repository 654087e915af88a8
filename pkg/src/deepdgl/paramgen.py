"""Per-window generation of the local encoder's last attention block.

A two-layer ReLU MLP maps the context vector ``D`` to one flat vector holding
every parameter of an attention block; :class:`BlockLayout` fixes how that
vector is cut into named tensors.
"""

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from deepdgl.errors import ConfigurationError
from deepdgl.nets import (
    AttentionBlockConfig,
    ParameterSet,
    attention_block,
    block_entries,
    init_block_params,
)


@dataclass(frozen=True)
class BlockLayout:
    """Ordered ``(name, shape)`` entries of a flat parameter vector.

    Order: Q, K, V and output projections (weight then bias each), FFN input
    and output layers, then the attention and FFN layer-norm scale/shift pairs.
    """

    entries: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def sizes(self) -> list[int]:
        sizes = []
        for _, shape in self.entries:
            n = 1
            for dim in shape:
                n *= dim
            sizes.append(n)
        return sizes

    @property
    def total_size(self) -> int:
        return sum(self.sizes)

    def unflatten(self, flat: torch.Tensor) -> ParameterSet:
        """Cut ``flat [..., total_size]`` into tensors ``[..., *shape]``."""
        if flat.shape[-1] != self.total_size:
            raise ConfigurationError(
                f"Flat parameters have {flat.shape[-1]} entries, layout needs {self.total_size}"
            )
        lead = flat.shape[:-1]
        pieces = torch.split(flat, self.sizes, dim=-1)
        return ParameterSet(
            {
                name: piece.reshape(*lead, *shape)
                for (name, shape), piece in zip(self.entries, pieces)
            }
        )

    def flatten(self, params: Mapping[str, torch.Tensor]) -> torch.Tensor:
        """Inverse of :meth:`unflatten` for tensors with matching leading axes."""
        parts = []
        for name, shape in self.entries:
            tensor = params[name]
            lead = tensor.shape[: tensor.dim() - len(shape)]
            parts.append(tensor.reshape(*lead, -1))
        return torch.cat(parts, dim=-1)


def layout_for(cfg: AttentionBlockConfig) -> BlockLayout:
    return BlockLayout(entries=tuple(block_entries(cfg)))


@dataclass(frozen=True)
class GeneratedBlockParams:
    """Flat generated parameters ``[B, total_size]`` (or ``[total_size]``) and their layout."""

    flat: torch.Tensor
    layout: BlockLayout

    def parameter_set(self) -> ParameterSet:
        return self.layout.unflatten(self.flat)


class HyperNetwork(nn.Module):
    """``g * (W2 relu(W1 D + b1) + b2)``.

    ``W2`` starts at zero and ``b2`` at ``init / g`` for a standard block
    initialization, so every window starts with the same well-conditioned block.
    """

    def __init__(
        self,
        context_dim: int,
        block_cfg: AttentionBlockConfig,
        hidden: int = 64,
        gain: float = 0.05,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        if gain <= 0:
            raise ValueError(f"gain must be greater than 0, got {gain}")
        self.block_cfg = block_cfg
        self.layout = layout_for(block_cfg)
        self.gain = gain
        self.fc1 = nn.Linear(context_dim, hidden)
        self.fc2 = nn.Linear(hidden, self.layout.total_size)
        with torch.no_grad():
            self.fc2.weight.zero_()
            base = self.layout.flatten(init_block_params(block_cfg, generator))
            self.fc2.bias.copy_(base / gain)

    def forward(self, D: torch.Tensor) -> GeneratedBlockParams:
        flat = self.gain * self.fc2(torch.relu(self.fc1(D)))
        return GeneratedBlockParams(flat=flat, layout=self.layout)


def generate(
    D: torch.Tensor, hyper: HyperNetwork, layout: Optional[BlockLayout] = None
) -> GeneratedBlockParams:
    if layout is not None and layout != hyper.layout:
        raise ConfigurationError("Layout does not match the hypernetwork's output layout")
    return hyper(D)


def apply_generated(
    h: torch.Tensor, gen: GeneratedBlockParams, cfg: AttentionBlockConfig
) -> torch.Tensor:
    """Run the attention block of ``cfg`` with generated parameters.

    Raises:
        ConfigurationError: ``gen`` was produced for a different block shape.
    """
    if gen.layout != layout_for(cfg):
        raise ConfigurationError("Generated parameters do not match the block configuration")
    return attention_block(h, gen.parameter_set(), cfg)
