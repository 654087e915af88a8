"""Tests for the mini-batch layout, the training loop and the evaluation protocols."""

import dataclasses
import math

import numpy as np
import pandas as pd
import pytest
import torch

from deepdgl.config import VARIANTS, ModelConfig, TrainConfig
from deepdgl.data import SyntheticSpec, generate_synthetic, split
from deepdgl.errors import (
    ConfigurationError,
    DataError,
    DivergenceError,
    ProtocolError,
    ShapeError,
)
from deepdgl.model import LossBreakdown, TrainStep
from deepdgl.training import (
    Trainer,
    evaluate_inductive,
    evaluate_transductive,
    horizontal_blocks,
    learning_rate_at,
    vertical_blocks,
    write_training_curve,
)

SMALL_MODEL = ModelConfig(
    input_length=8,
    horizon=3,
    conv_kernels=(3, 2),
    conv_channels=(4, 4),
    encoder_dims=(4, 4),
    encoder_heads=(2, 2),
    decoder_conv_kernels=(2, 2),
    decoder_conv_channels=(4, 4),
    decoder_dims=(4, 1),
    decoder_heads=(2, 1),
    ffn_ratio=2,
    codebook_size=6,
    context_dim=2,
    positives=2,
    negatives=4,
    hyper_hidden=4,
    discriminator_hidden=4,
    n_covariates=2,
)


def _splits(n_series=12, n_steps=80, seed=0):
    panel = generate_synthetic(SyntheticSpec(n_series=n_series, n_steps=n_steps, seed=seed))
    return split(panel.collection, seed=seed, T=8, tau=3, stride=2)


def _train_cfg(**overrides):
    return TrainConfig(**{"epochs": 2, "b_h": 8, "b_v": 4, "dtype": "float64", **overrides})


@pytest.fixture(scope="module")
def splits():
    return _splits()


@pytest.fixture(scope="module")
def trained(splits):
    trainer = Trainer(splits, SMALL_MODEL, _train_cfg())
    return trainer, trainer.fit()


class TestSchedule:
    def test_step_decay(self):
        cfg = TrainConfig(learning_rate=1e-3)
        assert learning_rate_at(0, cfg) == 1e-3
        assert learning_rate_at(9, cfg) == 1e-3
        assert learning_rate_at(10, cfg) == pytest.approx(5e-4)
        assert learning_rate_at(25, cfg) == pytest.approx(2.5e-4)

    def test_scheduler_follows_decay(self, splits):
        trainer = Trainer(splits, SMALL_MODEL, _train_cfg(decay_every=1, epochs=3))
        trainer.run_epoch()
        trainer.run_epoch()
        assert [r.learning_rate for r in trainer.history] == pytest.approx([1e-3, 5e-4])
        assert trainer.optimizer.param_groups[0]["lr"] == pytest.approx(2.5e-4)


class TestBlocks:
    def test_horizontal_sizes(self):
        blocks = horizontal_blocks(range(100), 32)
        assert [len(b) for b in blocks] == [32, 32, 32, 4]

    def test_horizontal_shuffle_is_permutation(self):
        blocks = horizontal_blocks(range(50), 8, np.random.default_rng(0))
        assert sorted(i for b in blocks for i in b) == list(range(50))

    def test_vertical_count(self):
        assert len(vertical_blocks(range(370), 64)) == math.ceil(370 / 64)

    def test_vertical_merge_short_tail(self):
        blocks = vertical_blocks(range(5), 2, min_series=2)
        assert [len(b) for b in blocks] == [2, 3]

    def test_vertical_tail_kept_when_allowed(self):
        assert [len(b) for b in vertical_blocks(range(5), 2)] == [2, 2, 1]

    def test_vertical_block_below_min_series(self):
        with pytest.raises(ValueError, match="b_v must be greater than or equal to 2"):
            vertical_blocks(range(5), 1, min_series=2)

    def test_block_size_must_be_positive(self):
        with pytest.raises(ValueError, match="b_h"):
            horizontal_blocks(range(3), 0)


class TestTrainer:
    def test_batches_cover_training_windows(self, splits):
        trainer = Trainer(splits, SMALL_MODEL, _train_cfg())
        seen = []
        for batch in trainer.batches():
            assert batch.n_distinct_series >= 2
            seen.extend(zip(batch.series_index.tolist(), batch.inputs[:, 0].tolist()))
        assert len(seen) == len(splits.train_windows)

    def test_fit_records_history(self, trained):
        trainer, ckpt = trained
        assert len(trainer.history) == 2
        record = trainer.history[-1]
        assert record.n_batches > 0
        assert math.isfinite(record.total)
        assert record.total == pytest.approx(record.pred + record.cmc + record.vq)
        assert 0 <= record.unused_codes <= SMALL_MODEL.codebook_size

    def test_keeps_best_validation_epoch(self, trained):
        trainer, ckpt = trained
        best = min(trainer.history, key=lambda r: r.val_wape)
        assert ckpt.manifest["epoch"] == best.epoch
        assert ckpt.manifest["val_wape"] == pytest.approx(best.val_wape)
        expected_series = list(trainer.splits.transductive_series)
        assert ckpt.manifest["split.transductive_series"] == expected_series
        assert ckpt.manifest["train.seed"] == 0

    def test_deterministic(self, splits, trained):
        _, first = trained
        second = Trainer(splits, SMALL_MODEL, _train_cfg()).fit()
        assert first.checksum() == second.checksum()

    def test_seed_changes_weights(self, splits, trained):
        _, first = trained
        other = Trainer(splits, SMALL_MODEL, _train_cfg(seed=1)).fit()
        assert first.checksum() != other.checksum()

    def test_training_curve(self, trained, tmp_path):
        trainer, _ = trained
        path = tmp_path / "curve.csv"
        write_training_curve(trainer.history, path)
        frame = pd.read_csv(path)
        assert list(frame["epoch"]) == [0, 1]
        assert {"pred", "cmc", "vq", "total", "val_wape", "perplexity"} <= set(frame.columns)

    def test_divergence(self, splits, monkeypatch):
        trainer = Trainer(splits, SMALL_MODEL, _train_cfg())
        forward = trainer.model.forward_train

        def poisoned(batch, generator=None):
            out = forward(batch, generator)
            nan = out.losses.pred * float("nan")
            return TrainStep(
                out.predictions,
                LossBreakdown.combine(nan, out.losses.cmc, out.losses.vq),
                out.encoder_outputs,
                out.code_indices,
            )

        monkeypatch.setattr(trainer.model, "forward_train", poisoned)
        with pytest.raises(DivergenceError, match="not finite") as excinfo:
            trainer.run_epoch()
        assert excinfo.value.diagnostics["epoch"] == 0

    def test_covariate_width_mismatch(self, splits):
        with pytest.raises(ShapeError, match="3"):
            Trainer(splits, SMALL_MODEL.model_copy(update={"n_covariates": 3}), _train_cfg())

    def test_no_training_windows(self, splits):
        empty = dataclasses.replace(splits, train_windows=())
        with pytest.raises(DataError, match="No transductive training windows"):
            Trainer(empty, SMALL_MODEL, _train_cfg())

    def test_dead_codes_are_reset(self, splits):
        cfg = SMALL_MODEL.model_copy(update={"codebook_size": 64, "dead_code_patience": 1})
        trainer = Trainer(splits, cfg, _train_cfg(epochs=1))
        record = trainer.run_epoch()
        # a small batch leaves most of 64 codes unused
        assert record.resets > 0

    def test_reset_rows_drop_optimizer_moments(self, splits):
        cfg = SMALL_MODEL.model_copy(update={"codebook_size": 64, "dead_code_patience": 1})
        trainer = Trainer(splits, cfg, _train_cfg(epochs=1))
        codebook = trainer.model.vq.codebook
        resets = []
        for batch in trainer.batches():
            state = trainer.optimizer.state[codebook]
            if state:
                state["exp_avg"].fill_(1.0)
                state["exp_avg_sq"].fill_(1.0)
                _, resets = trainer.step(batch)
                if resets:
                    break
            else:
                trainer.step(batch)
        assert resets
        state = trainer.optimizer.state[codebook]
        kept = [i for i in range(64) if i not in resets]
        assert torch.all(state["exp_avg"][resets] == 0)
        assert torch.all(state["exp_avg_sq"][resets] == 0)
        assert torch.all(state["exp_avg_sq"][kept] > 0)

    def test_contrastive_variants_need_two_series_per_block(self, splits):
        with pytest.raises(ConfigurationError, match="b_v must be greater than or equal to 2"):
            Trainer(splits, SMALL_MODEL, _train_cfg(b_v=1))

    def test_single_series_blocks_without_contrastive_training(self, splits):
        cfg = SMALL_MODEL.model_copy(update={"variant": "no_cmc"})
        record = Trainer(splits, cfg, _train_cfg(b_v=1)).run_epoch()
        assert record.n_batches > 0
        assert math.isfinite(record.total)

    @pytest.mark.slow
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_loss_decreases(self, variant):
        splits = _splits(n_series=20, n_steps=400)
        cfg = SMALL_MODEL.model_copy(update={"variant": variant})
        trainer = Trainer(splits, cfg, _train_cfg(epochs=12))
        trainer.fit()
        totals = [r.total for r in trainer.history]
        assert np.median(totals[-5:]) < np.median(totals[:5])

    @pytest.mark.slow
    def test_every_code_selected_or_reset_within_100_batches(self):
        splits = _splits(n_series=20, n_steps=400)
        cfg = SMALL_MODEL.model_copy(update={"codebook_size": 16})
        trainer = Trainer(splits, cfg, _train_cfg(epochs=3))
        # batch number at which each row was last selected or reset
        last_touched = np.zeros(16, dtype=int)
        n = 0
        while n < 250:
            for batch in trainer.batches():
                n += 1
                out, resets = trainer.step(batch)
                last_touched[torch.unique(out.code_indices).numpy()] = n
                last_touched[resets] = n
                assert (n - last_touched).max() < 100


class TestEvaluation:
    def test_transductive(self, splits, trained):
        _, ckpt = trained
        report = evaluate_transductive(ckpt, splits)
        assert report.n_windows == len(splits.test_windows)
        assert report.labels["mode"] == "transductive"
        assert report.labels["variant"] == "full"
        assert np.isfinite(report.wape)

    def test_inductive_leaves_parameters_unchanged(self, splits, trained):
        _, ckpt = trained
        checksum = ckpt.checksum()
        report = evaluate_inductive(ckpt, splits)
        assert report.labels["checksum"] == checksum
        assert ckpt.checksum() == checksum
        assert report.n_windows == len(splits.inductive_test_windows)

    def test_inductive_rejects_training_series(self, splits, trained):
        _, ckpt = trained
        leaked = dataclasses.replace(
            splits, inductive_test_series=(splits.transductive_series[0],)
        )
        with pytest.raises(ProtocolError, match="used in training"):
            evaluate_inductive(ckpt, leaked)

    def test_inductive_rejects_early_windows(self, splits, trained):
        _, ckpt = trained
        early = dataclasses.replace(
            splits, inductive_test_windows=splits.inductive_test_windows + splits.train_windows[:1]
        )
        with pytest.raises(ProtocolError, match="before the end of the training range"):
            evaluate_inductive(ckpt, early)

    def test_model_left_in_eval_mode(self, trained):
        _, ckpt = trained
        model = ckpt.build_model()
        assert not model.training
        assert model.dtype == torch.float64
