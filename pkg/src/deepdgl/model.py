"""DeepDGL model assembly.

The global encoder (conv → VQ → attention blocks) and the local encoder
(conv → attention blocks → a last block generated from the context ``D``)
share their convolution stack and their first ``L - 1`` attention blocks. The
decoder runs masked self-attention over its own inputs and cross-attention over
the per-step concatenation ``[global ; local]`` of the encoder outputs.

Variants switch paths off rather than zeroing them, so a disabled path has no
parameters at all:

==================  ======  =====  ===  ===
variant             global  local  VQ   CMC
==================  ======  =====  ===  ===
full                yes     yes    yes  yes
no_cmc              yes     yes    yes  no
global_only         yes     no     yes  no
local_only          no      yes    no   yes
conv_transformer    yes     no     no   no
==================  ======  =====  ===  ===
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import torch
from torch import nn

from deepdgl.config import ModelConfig
from deepdgl.context import (
    ContextNetwork,
    Discriminator,
    cmc_loss,
    sample_cmc_batch,
    sample_context,
)
from deepdgl.data.batching import WindowBatch
from deepdgl.data.windows import normalize, window_stats
from deepdgl.errors import ConfigurationError, ShapeError
from deepdgl.nets import AttentionBlock, BlockStack, CausalConvStack
from deepdgl.paramgen import HyperNetwork, apply_generated
from deepdgl.vq import VectorQuantizer, vq_loss

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar loss terms; ``total == pred + cmc + vq`` in that order."""

    pred: torch.Tensor
    cmc: torch.Tensor
    vq: torch.Tensor
    total: torch.Tensor

    @classmethod
    def combine(cls, pred: torch.Tensor, cmc: torch.Tensor, vq: torch.Tensor) -> "LossBreakdown":
        return cls(pred=pred, cmc=cmc, vq=vq, total=pred + cmc + vq)

    def as_floats(self) -> dict[str, float]:
        return {
            "pred": float(self.pred),
            "cmc": float(self.cmc),
            "vq": float(self.vq),
            "total": float(self.total),
        }


@dataclass(frozen=True)
class GlobalEncoding:
    output: torch.Tensor  # [B, T, d]
    features: torch.Tensor  # conv output before quantization
    indices: Optional[torch.Tensor] = None
    codes: Optional[torch.Tensor] = None


class TrainStep(NamedTuple):
    predictions: torch.Tensor
    losses: LossBreakdown
    # Pre-quantization encoder outputs, kept for dead-code resets
    encoder_outputs: Optional[torch.Tensor]
    code_indices: Optional[torch.Tensor]


def prediction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """MAE over the horizon, averaged over the batch."""
    if pred.shape != target.shape:
        raise ShapeError(
            f"Predictions {tuple(pred.shape)} and targets {tuple(target.shape)} differ in shape"
        )
    return (target - pred).abs().mean(dim=-1).mean()


class EncoderTrunk(nn.Module):
    """Convolution stack and attention blocks ``1..L-1`` shared by both encoders."""

    def __init__(self, cfg: ModelConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        conv_cfg = cfg.conv_config()
        self.conv = CausalConvStack(conv_cfg)
        self.adapter = nn.Linear(conv_cfg.out_channels + cfg.n_covariates, cfg.encoder_dim)
        self.blocks = nn.ModuleList(
            AttentionBlock(c, generator) for c in cfg.encoder_block_configs()[:-1]
        )

    def features(self, inputs: torch.Tensor) -> torch.Tensor:
        return self.conv(inputs.unsqueeze(-1))

    def attend(self, features: torch.Tensor, covariates: torch.Tensor) -> torch.Tensor:
        h = self.adapter(torch.cat([features, covariates], dim=-1))
        for block in self.blocks:
            h = block(h)
        return h


class Decoder(nn.Module):
    """Causal conv stack, then masked self-attention + cross-attention blocks ending at width 1."""

    def __init__(self, cfg: ModelConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        conv_cfg = cfg.decoder_conv_config()
        self.conv = CausalConvStack(conv_cfg)
        self.blocks = BlockStack(
            conv_cfg.out_channels + cfg.n_covariates, cfg.decoder_block_configs(), generator
        )

    def forward(
        self, inputs: torch.Tensor, covariates: torch.Tensor, context: torch.Tensor
    ) -> torch.Tensor:
        h = torch.cat([self.conv(inputs.unsqueeze(-1)), covariates], dim=-1)
        return self.blocks(h, context).squeeze(-1)


class DeepDGL(nn.Module):
    """Global/local disentangled encoder-decoder forecaster.

    Parameters are named ``trunk.*``, ``global_last.*``, ``vq.codebook``,
    ``ctx.*``, ``disc.sh.*``/``disc.lo.*``, ``hyper.*`` and ``decoder.*``;
    modules a variant does not use are ``None``.
    """

    def __init__(self, cfg: ModelConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.cfg = cfg
        conv_out = cfg.conv_config().out_channels
        self.last_block_cfg = cfg.encoder_block_configs()[-1]

        self.trunk = EncoderTrunk(cfg, generator)
        self.global_last: Optional[AttentionBlock] = None
        self.vq: Optional[VectorQuantizer] = None
        self.ctx: Optional[ContextNetwork] = None
        self.hyper: Optional[HyperNetwork] = None
        self.disc: Optional[nn.ModuleDict] = None

        if cfg.uses_global:
            self.global_last = AttentionBlock(self.last_block_cfg, generator)
        if cfg.uses_vq:
            self.vq = VectorQuantizer(cfg.codebook_size, conv_out, generator)
        if cfg.uses_local:
            self.ctx = ContextNetwork(
                cfg.conv_config(),
                cfg.encoder_block_configs(),
                cfg.n_covariates,
                cfg.context_dim,
                generator,
            )
            self.hyper = HyperNetwork(
                cfg.context_dim,
                self.last_block_cfg,
                hidden=cfg.hyper_hidden,
                gain=cfg.hyper_gain,
                generator=generator,
            )
        if cfg.uses_cmc:
            self.disc = nn.ModuleDict(
                {
                    "sh": Discriminator(cfg.context_dim, conv_out, cfg.discriminator_hidden),
                    "lo": Discriminator(cfg.context_dim, cfg.encoder_dim, cfg.discriminator_hidden),
                }
            )
        self.decoder = Decoder(cfg, generator)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def _covariates(
        self, covariates: Optional[torch.Tensor], reference: torch.Tensor, length: int, what: str
    ) -> torch.Tensor:
        n = self.cfg.n_covariates
        if covariates is None:
            if n:
                raise ShapeError(f"Model uses {n} covariates but {what} covariates are missing")
            return reference.new_zeros(reference.shape[0], length, 0)
        if covariates.shape[-1] != n or covariates.shape[-2] != length:
            raise ShapeError(
                f"Expected {what} covariates of shape [..., {length}, {n}], "
                f"got {tuple(covariates.shape)}"
            )
        return covariates

    def encode_global(
        self,
        inputs: torch.Tensor,
        covariates: Optional[torch.Tensor] = None,
        *,
        features: Optional[torch.Tensor] = None,
    ) -> GlobalEncoding:
        """Conv → (VQ) → attention blocks; ``inputs [B, T]`` normalized."""
        if self.global_last is None:
            raise ConfigurationError(f"Variant '{self.cfg.variant}' has no global encoder")
        covariates = self._covariates(covariates, inputs, inputs.shape[-1], "input")
        if features is None:
            features = self.trunk.features(inputs)
        h, indices, codes = features, None, None
        if self.vq is not None:
            result = self.vq(features)
            h, indices, codes = result.quantized, result.indices, result.codes
        output = self.global_last(self.trunk.attend(h, covariates))
        return GlobalEncoding(output=output, features=features, indices=indices, codes=codes)

    def encode_local(
        self,
        inputs: torch.Tensor,
        D: torch.Tensor,
        covariates: Optional[torch.Tensor] = None,
        *,
        features: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Conv → shared attention blocks → block generated from ``D [B, d_D]``."""
        if self.hyper is None:
            raise ConfigurationError(f"Variant '{self.cfg.variant}' has no local encoder")
        if D.shape[-1] != self.cfg.context_dim:
            raise ShapeError(f"D must have length {self.cfg.context_dim}, got {D.shape[-1]}")
        covariates = self._covariates(covariates, inputs, inputs.shape[-1], "input")
        if features is None:
            features = self.trunk.features(inputs)
        h = self.trunk.attend(features, covariates)
        return apply_generated(h, self.hyper(D), self.last_block_cfg)

    def decode(
        self,
        enc_global: Optional[torch.Tensor],
        enc_local: Optional[torch.Tensor],
        decoder_inputs: torch.Tensor,
        covariates: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Normalized predictions ``[B, L]`` for decoder inputs ``[B, L]``.

        Raises:
            ConfigurationError: an encoder output is given that the variant
                does not produce, or one it needs is missing.
        """
        parts = []
        for name, used, encoded in (
            ("global", self.cfg.uses_global, enc_global),
            ("local", self.cfg.uses_local, enc_local),
        ):
            if used and encoded is None:
                raise ConfigurationError(
                    f"Variant '{self.cfg.variant}' needs the {name} encoder output"
                )
            if not used and encoded is not None:
                raise ConfigurationError(
                    f"Variant '{self.cfg.variant}' has no {name} encoder output to attend to"
                )
            if encoded is not None:
                parts.append(encoded)
        context = torch.cat(parts, dim=-1)
        covariates = self._covariates(
            covariates, decoder_inputs, decoder_inputs.shape[-1], "future"
        )
        return self.decoder(decoder_inputs, covariates, context)

    def forward_train(
        self, batch: WindowBatch, generator: Optional[torch.Generator] = None
    ) -> TrainStep:
        """Teacher-forced forward pass with every loss term of the variant.

        Decoder inputs are ``[x_T, y_1, ..., y_{tau-1}]``.

        Raises:
            SamplingError: CMC is active and the batch holds a single series.
        """
        cfg = self.cfg
        x = batch.inputs
        covariates = self._covariates(batch.input_covariates, x, x.shape[-1], "input")
        zero = x.new_zeros(())
        vq_term, cmc_term = zero, zero
        features = self.trunk.features(x)

        enc_global, enc_local, indices = None, None, None
        if self.global_last is not None:
            encoded = self.encode_global(x, covariates, features=features)
            enc_global, indices = encoded.output, encoded.indices
            if encoded.codes is not None:
                vq_term = vq_loss(features, encoded.codes, cfg.gamma)

        if self.ctx is not None:
            views, posterior = self.ctx(x, covariates)
            if self.disc is not None:
                D = sample_context(posterior, "train", generator)
                cmc_batch = sample_cmc_batch(
                    views, batch.series_index, cfg.positives, cfg.negatives, generator
                )
                cmc_term = cmc_loss(
                    cmc_batch,
                    posterior,
                    D,
                    self.disc["sh"],
                    self.disc["lo"],
                    alpha=cfg.alpha,
                    temperature=cfg.temperature,
                )
            else:
                D = posterior.mean
            enc_local = self.encode_local(x, D, covariates, features=features)

        decoder_inputs = torch.cat([x[:, -1:], batch.targets[:, :-1]], dim=1)
        predictions = self.decode(enc_global, enc_local, decoder_inputs, batch.target_covariates)
        pred_term = prediction_loss(predictions, batch.targets)
        losses = LossBreakdown.combine(pred_term, cmc_term, vq_term)
        encoder_outputs = features.detach() if self.vq is not None else None
        return TrainStep(predictions, losses, encoder_outputs, indices)

    def _encode_for_inference(
        self, inputs: torch.Tensor, covariates: Optional[torch.Tensor]
    ) -> tuple[Optional[torch.Tensor], Optional[torch.Tensor]]:
        features = self.trunk.features(inputs)
        enc_global, enc_local = None, None
        if self.global_last is not None:
            enc_global = self.encode_global(inputs, covariates, features=features).output
        if self.ctx is not None:
            covariates = self._covariates(covariates, inputs, inputs.shape[-1], "input")
            _, posterior = self.ctx(inputs, covariates)
            D = sample_context(posterior, "infer")
            enc_local = self.encode_local(inputs, D, covariates, features=features)
        return enc_global, enc_local

    def autoregress(
        self,
        inputs: torch.Tensor,
        input_covariates: Optional[torch.Tensor],
        future_covariates: Optional[torch.Tensor],
        horizon: Optional[int] = None,
    ) -> torch.Tensor:
        """Normalized autoregressive forecast ``[B, horizon]`` starting from ``x_T``."""
        horizon = self.cfg.horizon if horizon is None else horizon
        future_covariates = self._covariates(future_covariates, inputs, horizon, "future")
        enc_global, enc_local = self._encode_for_inference(inputs, input_covariates)
        decoder_inputs = inputs[:, -1:]
        steps = []
        for step in range(horizon):
            out = self.decode(
                enc_global, enc_local, decoder_inputs, future_covariates[:, : step + 1]
            )
            steps.append(out[:, -1:])
            decoder_inputs = torch.cat([decoder_inputs, out[:, -1:]], dim=1)
        return torch.cat(steps, dim=1)

    @torch.no_grad()
    def forecast_batch(self, batch: WindowBatch) -> torch.Tensor:
        """Forecasts in original units, ``float64 [B, tau]``; parameters are not touched."""
        was_training = self.training
        self.eval()
        try:
            batch = batch.to(self.dtype)
            normalized = self.autoregress(
                batch.inputs,
                batch.input_covariates,
                batch.target_covariates,
                horizon=batch.targets.shape[-1],
            )
        finally:
            self.train(was_training)
        return normalized.double() * batch.norm_std.unsqueeze(1) + batch.norm_mean.unsqueeze(1)

    def forecast(
        self,
        x_window: np.ndarray,
        future_covariates: Optional[np.ndarray] = None,
        input_covariates: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Forecast ``tau`` steps after one raw input window of length ``T``.

        Raises:
            ShapeError: wrong window length, or covariates missing while the
                model uses them.
        """
        window = np.asarray(x_window, dtype=np.float64)
        if window.shape != (self.cfg.input_length,):
            raise ShapeError(
                f"Input window must have length {self.cfg.input_length}, got shape {window.shape}"
            )
        n, horizon = self.cfg.n_covariates, self.cfg.horizon
        if n and (future_covariates is None or input_covariates is None):
            raise ShapeError(
                f"Model uses {n} covariates; pass both input and future covariates"
            )
        mean, std = window_stats(window)

        def as_tensor(values: Optional[np.ndarray], length: int) -> torch.Tensor:
            if values is None:
                return torch.zeros(1, length, 0, dtype=torch.float64)
            return torch.as_tensor(np.asarray(values, dtype=np.float64)).reshape(1, length, -1)

        batch = WindowBatch(
            inputs=torch.from_numpy(normalize(window, mean, std)).unsqueeze(0),
            targets=torch.zeros(1, horizon, dtype=torch.float64),
            input_covariates=as_tensor(input_covariates, self.cfg.input_length),
            target_covariates=as_tensor(future_covariates, horizon),
            series_index=torch.zeros(1, dtype=torch.long),
            norm_mean=torch.tensor([mean], dtype=torch.float64),
            norm_std=torch.tensor([std], dtype=torch.float64),
        )
        return self.forecast_batch(batch)[0].numpy()
