"""Context recognition and contrastive multi-horizon coding.

A convolutional Transformer encoder with a recurrent aggregator maps an input
window to a diagonal Gaussian posterior over a low-dimensional context vector
``D``. Two discriminators learn to pick the window's own short-term (conv) and
long-term (Transformer) representations out of distractors drawn from other
series, which ties ``D`` to series-specific dynamics, while a KL term toward
``N(0, I)`` keeps ``D`` small.
"""

from dataclasses import dataclass
from typing import Literal, Optional

import torch
from torch import nn

from deepdgl.errors import SamplingError, ShapeError
from deepdgl.nets import AttentionBlockConfig, BlockStack, CausalConvStack, ConvStackConfig

LOG_VAR_BOUND = 20.0


@dataclass(frozen=True)
class ContextPosterior:
    """``q(D|x)`` as mean and clamped log-variance, shapes ``[..., d_D]``."""

    mean: torch.Tensor
    log_var: torch.Tensor

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_var)


@dataclass(frozen=True)
class ContextViews:
    """Short-term ``v_sh [B, T, c]`` and long-term ``v_lo [B, T, d]`` representations."""

    v_sh: torch.Tensor
    v_lo: torch.Tensor


class ContextNetwork(nn.Module):
    """Conv stack → attention blocks → single-layer LSTM → (mean, log_var) heads."""

    def __init__(
        self,
        conv_cfg: ConvStackConfig,
        block_cfgs: list[AttentionBlockConfig],
        n_covariates: int,
        context_dim: int,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        self.n_covariates = n_covariates
        self.conv = CausalConvStack(conv_cfg)
        self.blocks = BlockStack(conv_cfg.out_channels + n_covariates, block_cfgs, generator)
        hidden = self.blocks.out_dim
        self.aggregator = nn.LSTM(hidden, hidden, num_layers=1, batch_first=True)
        self.mean_head = nn.Linear(hidden, context_dim)
        self.log_var_head = nn.Linear(hidden, context_dim)
        with torch.no_grad():
            # Start at the prior: unit variance, means near zero
            self.mean_head.weight.uniform_(-0.01, 0.01, generator=generator)
            self.mean_head.bias.zero_()
            self.log_var_head.weight.zero_()
            self.log_var_head.bias.zero_()

    def forward(
        self, inputs: torch.Tensor, covariates: torch.Tensor
    ) -> tuple[ContextViews, ContextPosterior]:
        if covariates.shape[-1] != self.n_covariates:
            raise ShapeError(
                f"Expected {self.n_covariates} covariates, got {covariates.shape[-1]}"
            )
        v_sh = self.conv(inputs.unsqueeze(-1))
        v_lo = self.blocks(torch.cat([v_sh, covariates], dim=-1))
        _, (last_hidden, _) = self.aggregator(v_lo)
        summary = last_hidden[-1]
        log_var = self.log_var_head(summary).clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND)
        return ContextViews(v_sh, v_lo), ContextPosterior(self.mean_head(summary), log_var)


def encode_context(
    network: ContextNetwork, inputs: torch.Tensor, covariates: torch.Tensor
) -> tuple[ContextViews, ContextPosterior]:
    return network(inputs, covariates)


def sample_context(
    posterior: ContextPosterior,
    mode: Literal["train", "infer"] = "train",
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Reparameterized draw in train mode, the posterior mean in infer mode."""
    if mode == "infer":
        return posterior.mean
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got '{mode}'")
    noise = torch.randn(
        posterior.mean.shape,
        generator=generator,
        dtype=posterior.mean.dtype,
        device=posterior.mean.device,
    )
    return posterior.mean + posterior.std * noise


def kl_divergence(posterior: ContextPosterior) -> torch.Tensor:
    """Per-sample ``KL[q(D|x) || N(0, I)]``."""
    terms = posterior.mean.pow(2) + posterior.log_var.exp() - posterior.log_var - 1.0
    return 0.5 * terms.sum(dim=-1)


def kl_loss(posterior: ContextPosterior) -> torch.Tensor:
    return kl_divergence(posterior).mean()


class Discriminator(nn.Module):
    """Two-layer ReLU MLP scoring the concatenation ``[D ; v]``."""

    def __init__(self, context_dim: int, view_dim: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(context_dim + view_dim, hidden), nn.ReLU(), nn.Linear(hidden, 1)
        )

    def forward(self, D: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        D = D.expand(*v.shape[:-1], D.shape[-1])
        return self.net(torch.cat([D, v], dim=-1)).squeeze(-1)


def info_nce(scores: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Cross-entropy of picking candidate 0 among ``scores[..., K + 1]``."""
    if temperature <= 0:
        raise ValueError(f"temperature must be greater than 0, got {temperature}")
    return -torch.log_softmax(scores / temperature, dim=-1)[..., 0]


def contrastive_loss(
    D: torch.Tensor,
    positive: torch.Tensor,
    negatives: torch.Tensor,
    discriminator: Discriminator,
    temperature: float = 0.1,
) -> torch.Tensor:
    """Mean InfoNCE loss of ``positive [..., w]`` against ``negatives [..., K, w]``.

    ``D`` has shape ``[..., d_D]`` matching the leading axes of ``positive``.
    """
    if negatives.dim() < 2 or negatives.shape[-2] == 0:
        raise ValueError("contrastive_loss needs at least one negative")
    candidates = torch.cat([positive.unsqueeze(-2), negatives], dim=-2)
    scores = discriminator(D.unsqueeze(-2), candidates)
    return info_nce(scores, temperature).mean()


@dataclass(frozen=True)
class CMCView:
    """Positives ``[B, P, w]`` and negatives ``[B, P, K, w]`` drawn from one view."""

    positives: torch.Tensor
    negatives: torch.Tensor
    positive_steps: torch.Tensor
    negative_samples: torch.Tensor
    negative_steps: torch.Tensor


@dataclass(frozen=True)
class CMCBatch:
    short: CMCView
    long: CMCView


def _sample_view(
    view: torch.Tensor,
    eligible: torch.Tensor,
    P: int,
    K: int,
    generator: Optional[torch.Generator],
) -> CMCView:
    B, T, _ = view.shape
    rows = torch.arange(B).unsqueeze(1)
    positive_steps = torch.randint(T, (B, P), generator=generator)
    negative_samples = torch.multinomial(
        eligible, P * K, replacement=True, generator=generator
    ).reshape(B, P, K)
    negative_steps = torch.randint(T, (B, P, K), generator=generator)
    return CMCView(
        positives=view[rows, positive_steps],
        negatives=view[negative_samples, negative_steps],
        positive_steps=positive_steps,
        negative_samples=negative_samples,
        negative_steps=negative_steps,
    )


def sample_cmc_batch(
    views: ContextViews,
    series_index: torch.Tensor,
    P: int = 8,
    K: int = 32,
    generator: Optional[torch.Generator] = None,
) -> CMCBatch:
    """Draw ``P`` positive steps per sample and view, ``K`` negatives per positive.

    Positive steps are uniform over ``0..T-1``; negatives are uniform over the
    same view's steps of batch samples from a different series.

    Raises:
        SamplingError: the batch holds a single series.
    """
    if P < 1 or K < 1:
        raise ValueError(f"P and K must be at least 1, got P={P}, K={K}")
    if torch.unique(series_index).numel() < 2:
        raise SamplingError("Contrastive negatives need at least 2 distinct series in the batch")
    eligible = (series_index.unsqueeze(0) != series_index.unsqueeze(1)).double()
    return CMCBatch(
        short=_sample_view(views.v_sh, eligible, P, K, generator),
        long=_sample_view(views.v_lo, eligible, P, K, generator),
    )


def cmc_loss(
    batch: CMCBatch,
    posterior: ContextPosterior,
    D: torch.Tensor,
    f1: Discriminator,
    f2: Discriminator,
    alpha: float = 0.7,
    temperature: float = 0.1,
) -> torch.Tensor:
    """Sum of the short- and long-view contrastive losses plus ``alpha * KL``.

    Each view loss is averaged over its positives.

    ``D [B, d_D]`` is the (reparameterized) context sample fed to the
    discriminators; the KL term is averaged over samples.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be greater than or equal to 0, got {alpha}")
    D = D.unsqueeze(1)
    short = contrastive_loss(D, batch.short.positives, batch.short.negatives, f1, temperature)
    long = contrastive_loss(D, batch.long.positives, batch.long.negatives, f2, temperature)
    return short + long + alpha * kl_loss(posterior)
