"""Causal convolution stacks and Transformer attention blocks.

Attention blocks are written as a pure function of ``(input, parameters)`` so
that the same code runs with stored parameters (:class:`AttentionBlock`) and with
per-sample generated parameters (``deepdgl.paramgen``). Matrices may carry a
leading batch dimension; in that case sample ``b`` of the input is transformed
with parameter slice ``b``.

Sequences are ``[batch, time, feature]``; a ``[time, feature]`` input is treated
as a batch of one.
"""

import math
from collections.abc import Iterator, Mapping
from typing import Any, Optional

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from deepdgl.errors import ConfigurationError, ShapeError

LAYER_NORM_EPS = 1e-5


class ConvStackConfig(BaseModel):
    """Kernel sizes and output channels of a stack of causal convolution blocks."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    in_channels: int = Field(default=1, ge=1)
    kernel_sizes: tuple[int, ...] = (5, 3, 3, 3)
    channels: tuple[int, ...] = (64, 64, 64, 64)
    normalize: bool = True

    @model_validator(mode="after")
    def _check_layers(self) -> "ConvStackConfig":
        if not self.kernel_sizes:
            raise ValueError("Convolution stack needs at least one layer")
        if len(self.kernel_sizes) != len(self.channels):
            raise ValueError(
                f"kernel_sizes and channels must have equal length, got "
                f"{len(self.kernel_sizes)} and {len(self.channels)}"
            )
        if min(self.kernel_sizes) < 1:
            raise ValueError(f"Kernel sizes must be at least 1, got {list(self.kernel_sizes)}")
        if min(self.channels) < 1:
            raise ValueError(f"Channels must be greater than 0, got {list(self.channels)}")
        return self

    @property
    def stride(self) -> int:
        return 1

    @property
    def out_channels(self) -> int:
        return self.channels[-1]


class AttentionBlockConfig(BaseModel):
    """Shape of one Transformer block.

    ``ffn_hidden`` defaults to ``4 * model_dim``; ``context_dim`` (cross blocks
    only) defaults to ``model_dim``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    model_dim: int = Field(ge=1)
    n_heads: int = Field(ge=1)
    ffn_hidden: int = Field(default=0, ge=0)
    masked: bool = False
    cross: bool = False
    context_dim: int = Field(default=0, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        if isinstance(data, dict):
            data = dict(data)
            if not data.get("ffn_hidden"):
                data["ffn_hidden"] = 4 * data.get("model_dim", 0)
            if data.get("cross") and not data.get("context_dim"):
                data["context_dim"] = data.get("model_dim", 0)
        return data

    @model_validator(mode="after")
    def _check_dims(self) -> "AttentionBlockConfig":
        if self.model_dim % self.n_heads != 0:
            raise ValueError(
                f"model_dim must be a multiple of n_heads, got {self.model_dim} and {self.n_heads}"
            )
        if self.ffn_hidden < self.model_dim:
            raise ValueError(
                f"ffn_hidden must be greater than or equal to model_dim, got {self.ffn_hidden}"
            )
        return self


class ParameterSet(Mapping[str, torch.Tensor]):
    """Read-only name → tensor map."""

    def __init__(self, tensors: Mapping[str, torch.Tensor]):
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    @property
    def total_count(self) -> int:
        return sum(t.numel() for t in self._tensors.values())

    def check_finite(self) -> None:
        for name, tensor in self._tensors.items():
            if not torch.isfinite(tensor).all():
                raise ValueError(f"Parameter '{name}' has non-finite entries")

    @classmethod
    def from_module(cls, module: nn.Module) -> "ParameterSet":
        return cls(dict(module.named_parameters()))


def block_entries(cfg: AttentionBlockConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered ``(name, shape)`` entries of a block's parameters."""
    d, f = cfg.model_dim, cfg.ffn_hidden
    entries: list[tuple[str, tuple[int, ...]]] = []
    for proj in ("q_proj", "k_proj", "v_proj", "out_proj"):
        entries += [(f"{proj}_weight", (d, d)), (f"{proj}_bias", (d,))]
    if cfg.cross:
        c = cfg.context_dim
        entries += [
            ("cross_q_proj_weight", (d, d)),
            ("cross_q_proj_bias", (d,)),
            ("cross_k_proj_weight", (d, c)),
            ("cross_k_proj_bias", (d,)),
            ("cross_v_proj_weight", (d, c)),
            ("cross_v_proj_bias", (d,)),
            ("cross_out_proj_weight", (d, d)),
            ("cross_out_proj_bias", (d,)),
            ("cross_norm_weight", (d,)),
            ("cross_norm_bias", (d,)),
        ]
    entries += [
        ("ffn_in_weight", (f, d)),
        ("ffn_in_bias", (f,)),
        ("ffn_out_weight", (d, f)),
        ("ffn_out_bias", (d,)),
        ("attn_norm_weight", (d,)),
        ("attn_norm_bias", (d,)),
        ("ffn_norm_weight", (d,)),
        ("ffn_norm_bias", (d,)),
    ]
    return entries


def param_count(cfg: AttentionBlockConfig) -> int:
    """Exact parameter count of a block.

    Self-attention blocks hold ``4(d^2 + d) + (d f + f) + (f d + d) + 4d``
    parameters; cross blocks add their own projections and normalization.
    """
    d, f = cfg.model_dim, cfg.ffn_hidden
    count = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * 2 * d
    if cfg.cross:
        c = cfg.context_dim
        count += 2 * (d * d + d) + 2 * (d * c + d) + 2 * d
    return count


def init_block_params(
    cfg: AttentionBlockConfig,
    generator: Optional[torch.Generator] = None,
    dtype: torch.dtype = torch.float32,
) -> dict[str, torch.Tensor]:
    """Fan-in scaled uniform projections, unit/zero layer norms."""
    shapes = dict(block_entries(cfg))
    params: dict[str, torch.Tensor] = {}
    for name, shape in shapes.items():
        if "norm" in name:
            params[name] = torch.ones(shape, dtype=dtype) if name.endswith("_weight") else (
                torch.zeros(shape, dtype=dtype)
            )
            continue
        weight_shape = shapes[name.replace("_bias", "_weight")]
        bound = 1.0 / math.sqrt(weight_shape[1])
        params[name] = (torch.rand(shape, generator=generator, dtype=dtype) * 2 - 1) * bound
    return params


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """``x W^T + b`` with shared ``[out, in]`` or per-sample ``[B, out, in]`` weights."""
    if weight.dim() == 2:
        return F.linear(x, weight, bias)
    return torch.einsum("bli,boi->blo", x, weight) + bias.unsqueeze(1)


def layer_norm(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Layer norm over the feature axis with shared or per-sample scale/shift.

    A single feature has zero variance, so width-1 inputs only get the affine map.
    """
    normed = x if x.shape[-1] == 1 else F.layer_norm(x, x.shape[-1:], eps=LAYER_NORM_EPS)
    if weight.dim() == 2:
        weight, bias = weight.unsqueeze(1), bias.unsqueeze(1)
    return normed * weight + bias


def causal_mask(length: int, device: Optional[torch.device] = None) -> torch.Tensor:
    """``True`` where query ``t`` would see key ``s > t``."""
    return torch.ones(length, length, dtype=torch.bool, device=device).triu(diagonal=1)


def multi_head_attention(
    query: torch.Tensor,
    source: torch.Tensor,
    params: Mapping[str, torch.Tensor],
    prefix: str,
    n_heads: int,
    masked: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product attention of ``query [B, Lq, d]`` over ``source [B, Ls, c]``.

    Returns the projected output and the attention weights ``[B, H, Lq, Ls]``.
    """
    B, Lq, d = query.shape
    Ls = source.shape[1]
    head = d // n_heads

    def heads(x: torch.Tensor, length: int) -> torch.Tensor:
        return x.reshape(B, length, n_heads, head).transpose(1, 2)

    q = heads(linear(query, params[f"{prefix}q_proj_weight"], params[f"{prefix}q_proj_bias"]), Lq)
    k = heads(linear(source, params[f"{prefix}k_proj_weight"], params[f"{prefix}k_proj_bias"]), Ls)
    v = heads(linear(source, params[f"{prefix}v_proj_weight"], params[f"{prefix}v_proj_bias"]), Ls)

    scores = q @ k.transpose(-2, -1) / math.sqrt(head)
    if masked:
        scores = scores.masked_fill(causal_mask(Lq, scores.device), float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    mixed = (weights @ v).transpose(1, 2).reshape(B, Lq, d)
    out = linear(mixed, params[f"{prefix}out_proj_weight"], params[f"{prefix}out_proj_bias"])
    return out, weights


def attention_block(
    h: torch.Tensor,
    params: Mapping[str, torch.Tensor],
    cfg: AttentionBlockConfig,
    context: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Post-norm Transformer block.

    (masked) self-attention → add & norm → [cross-attention over ``context`` →
    add & norm] → feed-forward (ReLU) → add & norm.

    Raises:
        ShapeError: ``h`` width differs from ``cfg.model_dim``.
        ConfigurationError: ``context`` given without ``cfg.cross`` or vice versa.
    """
    if h.shape[-1] != cfg.model_dim:
        raise ShapeError(f"Block expects width {cfg.model_dim}, got {h.shape[-1]}")
    if cfg.cross and context is None:
        raise ConfigurationError("Cross-attention block requires a context sequence")
    if not cfg.cross and context is not None:
        raise ConfigurationError("Context given to a block without cross-attention")

    unbatched = h.dim() == 2
    if unbatched:
        h = h.unsqueeze(0)
        context = context.unsqueeze(0) if context is not None else None

    attn, _ = multi_head_attention(h, h, params, "", cfg.n_heads, cfg.masked)
    h = layer_norm(h + attn, params["attn_norm_weight"], params["attn_norm_bias"])

    if context is not None:
        if context.shape[-1] != cfg.context_dim:
            raise ShapeError(
                f"Context width must be {cfg.context_dim}, got {context.shape[-1]}"
            )
        cross, _ = multi_head_attention(h, context, params, "cross_", cfg.n_heads)
        h = layer_norm(h + cross, params["cross_norm_weight"], params["cross_norm_bias"])

    hidden = torch.relu(linear(h, params["ffn_in_weight"], params["ffn_in_bias"]))
    ffn = linear(hidden, params["ffn_out_weight"], params["ffn_out_bias"])
    h = layer_norm(h + ffn, params["ffn_norm_weight"], params["ffn_norm_bias"])
    return h.squeeze(0) if unbatched else h


class AttentionBlock(nn.Module):
    """:func:`attention_block` with stored parameters."""

    def __init__(self, cfg: AttentionBlockConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.cfg = cfg
        for name, tensor in init_block_params(cfg, generator).items():
            self.register_parameter(name, nn.Parameter(tensor))

    def parameter_set(self) -> ParameterSet:
        return ParameterSet({name: getattr(self, name) for name, _ in block_entries(self.cfg)})

    def forward(self, h: torch.Tensor, context: Optional[torch.Tensor] = None) -> torch.Tensor:
        return attention_block(h, self.parameter_set(), self.cfg, context)


class CausalConvStack(nn.Module):
    """Blocks of left-padded convolution → layer norm → ReLU.

    Output length equals input length and step ``t`` only sees inputs ``<= t``.
    """

    def __init__(self, cfg: ConvStackConfig):
        super().__init__()
        self.cfg = cfg
        widths = (cfg.in_channels, *cfg.channels)
        self.convs = nn.ModuleList(
            nn.Conv1d(widths[i], widths[i + 1], kernel) for i, kernel in enumerate(cfg.kernel_sizes)
        )
        self.norms = nn.ModuleList(
            nn.LayerNorm(c) if cfg.normalize else nn.Identity() for c in cfg.channels
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.cfg.in_channels:
            raise ShapeError(
                f"Convolution stack expects {self.cfg.in_channels} input channels, "
                f"got {x.shape[-1]}"
            )
        unbatched = x.dim() == 2
        h = x.unsqueeze(0) if unbatched else x
        h = h.transpose(1, 2)
        for conv, norm, kernel in zip(self.convs, self.norms, self.cfg.kernel_sizes):
            h = conv(F.pad(h, (kernel - 1, 0)))
            h = torch.relu(norm(h.transpose(1, 2))).transpose(1, 2)
        h = h.transpose(1, 2)
        return h.squeeze(0) if unbatched else h


class BlockStack(nn.Module):
    """Attention blocks with linear width adapters where consecutive widths differ."""

    def __init__(
        self,
        in_dim: int,
        cfgs: list[AttentionBlockConfig],
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        self.cfgs = list(cfgs)
        widths = [in_dim] + [c.model_dim for c in cfgs]
        self.adapters = nn.ModuleList(
            nn.Linear(widths[i], widths[i + 1]) if widths[i] != widths[i + 1] else nn.Identity()
            for i in range(len(cfgs))
        )
        self.blocks = nn.ModuleList(AttentionBlock(c, generator) for c in cfgs)

    @property
    def out_dim(self) -> int:
        return self.cfgs[-1].model_dim

    def forward(self, h: torch.Tensor, context: Optional[torch.Tensor] = None) -> torch.Tensor:
        for adapter, block in zip(self.adapters, self.blocks):
            h = block(adapter(h), context)
        return h
