"""Tests for the codebook lookup, straight-through gradients and dead-code resets."""

import math

import pytest
import torch

from deepdgl.errors import MaintenanceError, ShapeError
from deepdgl.vq import (
    VectorQuantizer,
    codebook_usage,
    quantize,
    reset_dead_codes,
    straight_through,
    vq_loss,
)

BOOK = torch.tensor([[0.0, 0.0], [1.0, 1.0], [3.0, -1.0], [-2.0, 4.0]], dtype=torch.float64)


class TestQuantize:
    def test_nearest_row(self):
        codes, indices = quantize(torch.tensor([[0.9, 0.8]], dtype=torch.float64), BOOK)
        assert indices.tolist() == [1]
        torch.testing.assert_close(codes, BOOK[1:2])

    def test_tie_goes_to_lowest_index(self):
        _, indices = quantize(torch.tensor([0.5, 0.5], dtype=torch.float64), BOOK)
        assert int(indices) == 0

    def test_exact_match(self):
        codes, indices = quantize(BOOK[3].clone(), BOOK)
        assert int(indices) == 3
        assert torch.equal(codes, BOOK[3])

    def test_batched_shapes(self):
        z = torch.randn(4, 7, 2, dtype=torch.float64)
        codes, indices = quantize(z, BOOK)
        assert codes.shape == (4, 7, 2)
        assert indices.shape == (4, 7)

    def test_idempotent(self):
        z = torch.randn(3, 5, 2, dtype=torch.float64) * 3
        codes, indices = quantize(z, BOOK)
        _, again = quantize(codes, BOOK)
        assert torch.equal(indices, again)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError, match="width is 2"):
            quantize(torch.zeros(3, 5), BOOK)


class TestStraightThrough:
    def test_forward_value(self):
        z = torch.randn(2, 3, 2, dtype=torch.float64, requires_grad=True)
        codes, _ = quantize(z, BOOK)
        assert torch.equal(straight_through(z, codes), codes)

    def test_sum_gradient(self):
        z = torch.randn(2, 3, 2, dtype=torch.float64, requires_grad=True)
        book = BOOK.clone().requires_grad_(True)
        codes, _ = quantize(z, book)
        straight_through(z, codes).sum().backward()
        assert torch.equal(z.grad, torch.ones_like(z))
        assert book.grad is None or torch.count_nonzero(book.grad) == 0

    def test_gradient_passes_unchanged(self):
        z = torch.randn(2, 3, 2, dtype=torch.float64, requires_grad=True)
        weights = torch.randn(2, 3, 2, dtype=torch.float64)
        codes, _ = quantize(z.detach(), BOOK)

        out = straight_through(z, codes)
        (out.sin() * weights).sum().backward()
        # Same upstream gradient computed directly at the quantized value
        expected = codes.cos() * weights
        assert torch.equal(z.grad, expected)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            straight_through(torch.zeros(2, 2), torch.zeros(2, 3))


class TestVQLoss:
    def test_zero_distance(self):
        z = torch.randn(2, 4, 3)
        assert float(vq_loss(z, z.clone())) == 0.0

    def test_single_vector(self):
        z = torch.tensor([1.0, 0.0], dtype=torch.float64)
        z_q = torch.zeros(2, dtype=torch.float64)
        assert float(vq_loss(z, z_q, gamma=0.2)) == pytest.approx(1.2)

    def test_batch_average(self):
        z = torch.ones(4, 3, 2, dtype=torch.float64)
        z_q = torch.zeros(4, 3, 2, dtype=torch.float64)
        # 6 squared units per sample, averaged over 4 samples
        assert float(vq_loss(z, z_q, gamma=0.5)) == pytest.approx(1.5 * 6)

    def test_gradient_routing(self):
        z = torch.randn(1, 3, 2, dtype=torch.float64, requires_grad=True)
        book = BOOK.clone().requires_grad_(True)
        codes, _ = quantize(z, book)
        vq_loss(z, codes, gamma=0.0).backward()
        # gamma = 0 removes the only path to z
        assert torch.count_nonzero(z.grad) == 0
        assert torch.count_nonzero(book.grad) > 0

    def test_codebook_gradient_points_to_cluster_mean(self):
        z = torch.tensor([[[0.1, 0.2], [-0.3, 0.1], [0.2, -0.1]]], dtype=torch.float64)
        book = BOOK.clone().requires_grad_(True)
        codes, indices = quantize(z, book)
        assert indices.tolist() == [[0, 0, 0]]
        vq_loss(z, codes, gamma=0.2).backward()
        expected = 2 * 3 * (BOOK[0] - z[0].mean(0))
        torch.testing.assert_close(book.grad[0], expected)
        assert torch.count_nonzero(book.grad[1:]) == 0

    def test_descent_moves_row_toward_output(self):
        z = torch.tensor([[0.4, 0.3]], dtype=torch.float64)
        book = BOOK.clone().requires_grad_(True)
        codes, _ = quantize(z, book)
        before = float((z - codes).pow(2).sum())
        vq_loss(z, codes).backward()
        with torch.no_grad():
            moved = book - 0.01 * book.grad
        after = float((z - moved[0]).pow(2).sum())
        assert after < before

    def test_negative_gamma(self):
        with pytest.raises(ValueError, match="gamma"):
            vq_loss(torch.zeros(2), torch.zeros(2), gamma=-0.1)


class TestVectorQuantizer:
    def test_usage_only_in_training(self):
        book = VectorQuantizer(4, 2, torch.Generator().manual_seed(0))
        z = torch.randn(2, 5, 2)
        book.eval()
        book(z)
        assert int(book.usage_counts.sum()) == 0
        book.train()
        result = book(z)
        assert int(book.usage_counts.sum()) == 10
        assert result.indices.shape == (2, 5)

    def test_steps_since_use(self):
        book = VectorQuantizer(3, 2)
        book.record_usage(torch.tensor([0, 0, 2]))
        book.record_usage(torch.tensor([2]))
        assert book.steps_since_use.tolist() == [1, 2, 0]
        assert book.usage_counts.tolist() == [2, 0, 2]

    def test_usage_perplexity(self):
        counts, perplexity = codebook_usage(torch.tensor([0, 1, 2, 3]), 6)
        assert counts.tolist() == [1, 1, 1, 1, 0, 0]
        assert perplexity == pytest.approx(4.0)
        _, single = codebook_usage(torch.tensor([2, 2, 2]), 6)
        assert single == pytest.approx(1.0)
        assert math.isclose(codebook_usage(torch.tensor([], dtype=torch.long), 3)[1], 0.0)


class TestResetDeadCodes:
    def test_nothing_due(self):
        book = VectorQuantizer(8, 2, torch.Generator().manual_seed(0))
        before = book.codebook.detach().clone()
        assert reset_dead_codes(book, torch.randn(10, 2), patience=100) == []
        assert torch.equal(book.codebook.detach(), before)

    def test_only_dead_row_changes(self):
        book = VectorQuantizer(8, 2, torch.Generator().manual_seed(0))
        before = book.codebook.detach().clone()
        book.steps_since_use[5] = 100
        pool = torch.randn(10, 2) + 50.0
        reset = reset_dead_codes(book, pool, patience=100)
        assert reset == [5]
        after = book.codebook.detach()
        keep = [i for i in range(8) if i != 5]
        assert torch.equal(after[keep], before[keep])
        assert any(torch.equal(after[5], row) for row in pool)
        assert int(book.steps_since_use[5]) == 0

    def test_deterministic(self):
        rows = []
        for _ in range(2):
            book = VectorQuantizer(8, 2, torch.Generator().manual_seed(0))
            book.steps_since_use[[1, 6]] = 7
            reset_dead_codes(
                book, torch.arange(40.0).reshape(20, 2), 5, torch.Generator().manual_seed(3)
            )
            rows.append(book.codebook.detach()[[1, 6]].clone())
        assert torch.equal(rows[0], rows[1])

    def test_empty_pool(self):
        book = VectorQuantizer(4, 2)
        book.steps_since_use[0] = 3
        with pytest.raises(MaintenanceError, match="due for reset"):
            reset_dead_codes(book, torch.empty(0, 2), patience=2)
