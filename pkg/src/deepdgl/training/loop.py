"""Mini-batch training with horizontal (time offset) and vertical (series) blocks.

Every epoch shuffles the training start offsets into horizontal blocks of
``b_h`` offsets. Within each horizontal block the transductive series are
shuffled into ``V = ceil(n / b_v)`` vertical blocks, and each (horizontal,
vertical) pair forms one mini-batch. Contrastive negatives are drawn from
inside the mini-batch.
"""

import hashlib
import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd
import torch
from torch.optim.lr_scheduler import LambdaLR

from deepdgl.config import ModelConfig, TrainConfig
from deepdgl.data.batching import WindowBatch, collate
from deepdgl.data.windows import DatasetSplits, WindowSample
from deepdgl.errors import (
    ConfigurationError,
    DataError,
    DivergenceError,
    SamplingError,
    ShapeError,
)
from deepdgl.model import DeepDGL, TrainStep
from deepdgl.training.checkpoint import Checkpoint
from deepdgl.training.evaluation import evaluate_windows
from deepdgl.vq import codebook_usage, reset_dead_codes

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def learning_rate_at(epoch: int, cfg: TrainConfig) -> float:
    """Base rate times ``decay_factor`` for every ``decay_every`` completed epochs (0-based)."""
    return cfg.learning_rate * cfg.decay_factor ** (epoch // cfg.decay_every)


def _chunks(items: Sequence[int], size: int) -> list[list[int]]:
    return [list(items[i : i + size]) for i in range(0, len(items), size)]


def horizontal_blocks(
    offsets: Sequence[int], b_h: int, rng: Optional[np.random.Generator] = None
) -> list[list[int]]:
    """Blocks of ``b_h`` start offsets; the trailing partial block is kept.

    Offsets are shuffled first when ``rng`` is given.
    """
    if b_h < 1:
        raise ValueError(f"b_h must be greater than or equal to 1, got {b_h}")
    order = list(offsets) if rng is None else [int(i) for i in rng.permutation(offsets)]
    return _chunks(order, b_h)


def vertical_blocks(
    series: Sequence[int],
    b_v: int,
    rng: Optional[np.random.Generator] = None,
    min_series: int = 1,
) -> list[list[int]]:
    """``ceil(n / b_v)`` blocks of series indices.

    A trailing block with fewer than ``min_series`` series is merged into the
    previous block.
    """
    if b_v < max(1, min_series):
        raise ValueError(
            f"b_v must be greater than or equal to {max(1, min_series)}, got {b_v}"
        )
    order = list(series) if rng is None else [int(i) for i in rng.permutation(series)]
    blocks = _chunks(order, b_v)
    if len(blocks) > 1 and len(blocks[-1]) < min_series:
        blocks[-2].extend(blocks.pop())
    return blocks


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    learning_rate: float
    n_batches: int
    pred: float
    cmc: float
    vq: float
    total: float
    val_wape: float
    perplexity: float
    unused_codes: int
    resets: int


def write_training_curve(history: Sequence[EpochRecord], path: Union[str, Path]) -> None:
    pd.DataFrame([asdict(r) for r in history]).to_csv(path, index=False, float_format="%.10g")


def _rng_digest() -> str:
    return hashlib.sha256(torch.get_rng_state().numpy().tobytes()).hexdigest()[:16]


class Trainer:
    """Owns the model, optimizer, schedule and random streams of one training run.

    Random streams are split per purpose: model initialization, batch
    assembly, contrastive sampling with reparameterization, and dead-code resets.
    """

    def __init__(
        self,
        splits: DatasetSplits,
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        manifest: Optional[dict[str, Any]] = None,
    ):
        if not splits.train_windows:
            raise DataError("No transductive training windows")
        n_cov = splits.train_windows[0].input_covariates.shape[1]
        if n_cov != model_cfg.n_covariates:
            raise ShapeError(
                f"Windows carry {n_cov} covariates, the model expects {model_cfg.n_covariates}"
            )
        if model_cfg.uses_cmc and len(splits.transductive_series) < 2:
            raise SamplingError("Contrastive training needs at least 2 transductive series")
        if model_cfg.uses_cmc and train_cfg.b_v < 2:
            raise ConfigurationError(
                f"Variant '{model_cfg.variant}' draws contrastive negatives from other series "
                f"in the batch; b_v must be greater than or equal to 2, got {train_cfg.b_v}"
            )

        self.splits = splits
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.manifest = dict(manifest or {})
        self.dtype = torch.float64 if train_cfg.dtype == "float64" else torch.float32

        seed = train_cfg.seed
        torch.manual_seed(seed)
        self.model = DeepDGL(model_cfg, torch.Generator().manual_seed(seed)).to(self.dtype)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(), lr=train_cfg.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS
        )
        self.scheduler = LambdaLR(
            self.optimizer,
            lambda epoch: learning_rate_at(epoch, train_cfg) / train_cfg.learning_rate,
        )
        self.batch_rng = np.random.default_rng(seed)
        self.sample_generator = torch.Generator().manual_seed(seed + 1)
        self.reset_generator = torch.Generator().manual_seed(seed + 2)

        self._windows: dict[tuple[int, int], WindowSample] = {
            (w.series_index, w.start): w for w in splits.train_windows
        }
        self.history: list[EpochRecord] = []
        self.epoch = 0

    def batches(self) -> Iterator[WindowBatch]:
        cfg = self.train_cfg
        min_series = 2 if self.model_cfg.uses_cmc else 1
        for offsets in horizontal_blocks(self.splits.train_offsets, cfg.b_h, self.batch_rng):
            for series in vertical_blocks(
                self.splits.transductive_series, cfg.b_v, self.batch_rng, min_series
            ):
                keys = [(s, t) for s in series for t in offsets]
                samples = [self._windows[k] for k in keys if k in self._windows]
                if samples:
                    yield collate(samples, self.dtype)

    def step(self, batch: WindowBatch) -> tuple[TrainStep, list[int]]:
        """One forward/backward/update; returns the step output and reset codebook rows."""
        self.model.train()
        self.optimizer.zero_grad()
        out = self.model.forward_train(batch, self.sample_generator)
        total = out.losses.total
        if not torch.isfinite(total):
            raise DivergenceError(
                "Training loss is not finite",
                {"epoch": self.epoch, **out.losses.as_floats()},
            )
        total.backward()
        grad_norm = torch.nn.utils.clip_grad_norm_(
            self.model.parameters(), self.train_cfg.clip_norm
        )
        if not torch.isfinite(grad_norm):
            raise DivergenceError(
                "Gradient norm is not finite",
                {"epoch": self.epoch, "grad_norm": float(grad_norm), **out.losses.as_floats()},
            )
        self.optimizer.step()

        resets: list[int] = []
        if self.model.vq is not None and out.encoder_outputs is not None:
            resets = reset_dead_codes(
                self.model.vq,
                out.encoder_outputs,
                self.model_cfg.dead_code_patience,
                self.reset_generator,
            )
            self._clear_optimizer_rows(resets)
        return out, resets

    def _clear_optimizer_rows(self, rows: list[int]) -> None:
        """Zero Adam's moment estimates of reset codebook rows."""
        if not rows or self.model.vq is None:
            return
        state = self.optimizer.state.get(self.model.vq.codebook, {})
        for key in ("exp_avg", "exp_avg_sq"):
            if key in state:
                state[key][rows] = 0.0

    def validation_wape(self) -> float:
        if not self.splits.val_windows:
            return math.nan
        report = evaluate_windows(self.model, self.splits.val_windows, mode="transductive")
        return report.wape

    def run_epoch(self) -> EpochRecord:
        lr = self.optimizer.param_groups[0]["lr"]
        sums = {"pred": 0.0, "cmc": 0.0, "vq": 0.0, "total": 0.0}
        n_batches, n_resets = 0, 0
        indices = []
        for batch in self.batches():
            out, resets = self.step(batch)
            losses = out.losses.as_floats()
            for key in sums:
                sums[key] += losses[key]
            n_batches += 1
            n_resets += len(resets)
            if out.code_indices is not None:
                indices.append(out.code_indices.reshape(-1))
            logger.debug(
                "epoch %d batch %d: size=%d series=%d total=%.5f pred=%.5f cmc=%.5f vq=%.5f",
                self.epoch,
                n_batches,
                len(batch),
                batch.n_distinct_series,
                losses["total"],
                losses["pred"],
                losses["cmc"],
                losses["vq"],
            )

        perplexity, unused = math.nan, 0
        if indices and self.model.vq is not None:
            counts, perplexity = codebook_usage(torch.cat(indices), self.model.vq.size)
            unused = int((counts == 0).sum())

        means = {key: value / max(n_batches, 1) for key, value in sums.items()}
        record = EpochRecord(
            epoch=self.epoch,
            learning_rate=lr,
            n_batches=n_batches,
            val_wape=self.validation_wape(),
            perplexity=perplexity,
            unused_codes=unused,
            resets=n_resets,
            **means,
        )
        logger.info(
            "epoch %d/%d lr=%.2e loss=%.5f (pred=%.5f cmc=%.5f vq=%.5f) val_wape=%.4f "
            "perplexity=%.2f resets=%d",
            self.epoch + 1,
            self.train_cfg.epochs,
            lr,
            record.total,
            record.pred,
            record.cmc,
            record.vq,
            record.val_wape,
            record.perplexity,
            record.resets,
        )
        self.history.append(record)
        self.scheduler.step()
        self.epoch += 1
        return record

    def snapshot(self, record: EpochRecord) -> Checkpoint:
        splits = self.splits
        extra = {
            **self.manifest,
            "epoch": record.epoch,
            "val_wape": None if math.isnan(record.val_wape) else record.val_wape,
            "rng_digest": _rng_digest(),
            "split.seed": splits.seed,
            "split.T": splits.T,
            "split.tau": splits.tau,
            "split.stride": splits.stride,
            "split.train_end": splits.train_end,
            "split.transductive_series": list(splits.transductive_series),
            "split.inductive_val_series": list(splits.inductive_val_series),
            "split.inductive_test_series": list(splits.inductive_test_series),
        }
        for key, value in self.train_cfg.model_dump().items():
            extra[f"train.{key}"] = value
        return Checkpoint.from_model(self.model, extra)

    def fit(self) -> Checkpoint:
        """Train for ``epochs`` epochs and return the best-validation checkpoint.

        Without validation windows the last epoch is kept.
        """
        best: Optional[Checkpoint] = None
        best_wape = math.inf
        while self.epoch < self.train_cfg.epochs:
            record = self.run_epoch()
            wape = record.val_wape
            if best is None or math.isnan(wape) or wape < best_wape:
                best = self.snapshot(record)
                best_wape = wape if not math.isnan(wape) else best_wape
        assert best is not None
        logger.info(
            "Kept epoch %d (val_wape=%s)", best.manifest["epoch"] + 1, best.manifest["val_wape"]
        )
        return best


def train(splits: DatasetSplits, model_cfg: ModelConfig, train_cfg: TrainConfig) -> Checkpoint:
    return Trainer(splits, model_cfg, train_cfg).fit()
