import math

import numpy as np
import pytest

from streamseg.errors import DimensionMismatchError
from streamseg.metrics import (
    dice_coefficient,
    dice_loss,
    dice_loss_batch,
    hausdorff_distance,
    sigmoid,
)


def dice_loss_scalar_oracle(logits, target):
    """Independent scalar evaluation of the soft Dice formula."""
    num = 1.0
    den = 1.0
    for z, y in zip(np.ravel(logits), np.ravel(target)):
        p = 1.0 / (1.0 + math.exp(-z))
        num += 2.0 * p * y
        den += p + y
    return 1.0 - num / den


def hausdorff_brute_force(a, b):
    """O(|A||B|) pairwise-distance oracle for small masks."""
    pa = list(zip(*np.nonzero(a)))
    pb = list(zip(*np.nonzero(b)))
    if not pa and not pb:
        return 0.0
    if not pa or not pb:
        h, w = a.shape
        return math.hypot(h - 1, w - 1)

    def directed(src, dst):
        return max(min(math.dist(p, q) for q in dst) for p in src)

    return max(directed(pa, pb), directed(pb, pa))


class TestDiceCoefficient:
    def test_identical_masks(self):
        m = np.zeros((6, 6), dtype=bool)
        m[1:4, 1:4] = True
        assert dice_coefficient(m, m) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((6, 6), dtype=bool)
        b = np.zeros((6, 6), dtype=bool)
        a[0, 0] = True
        b[5, 5] = True
        assert dice_coefficient(a, b) == 0.0

    def test_half_overlap(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0, 0:4] = True
        b[0, 2:4] = True
        b[1, 0:2] = True
        assert dice_coefficient(a, b) == pytest.approx(0.5)

    def test_both_empty(self):
        z = np.zeros((3, 3), dtype=bool)
        assert dice_coefficient(z, z) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = rng.random((8, 8)) < 0.4
            b = rng.random((8, 8)) < 0.4
            assert dice_coefficient(a, b) == dice_coefficient(b, a)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            dice_coefficient(np.zeros((2, 2), dtype=bool), np.zeros((3, 3), dtype=bool))


class TestDiceLoss:
    def test_saturated_perfect_prediction(self):
        target = np.zeros((8, 8))
        target[2:6, 2:6] = 1.0
        logits = np.where(target > 0, 20.0, -20.0)
        loss, _ = dice_loss(logits, target)
        assert loss < 1e-3

    def test_all_zero_logits_half_foreground(self):
        target = np.zeros((4, 4))
        target[:2, :] = 1.0  # 8 foreground pixels
        logits = np.zeros((4, 4))
        loss, _ = dice_loss(logits, target)
        # frozen from the scalar oracle: p=0.5 everywhere ->
        # 1 - (2*0.5*8 + 1) / (8 + 8 + 1) = 1 - 9/17
        assert loss == pytest.approx(1.0 - 9.0 / 17.0)
        assert loss == pytest.approx(dice_loss_scalar_oracle(logits, target))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        h = 1e-4
        for _ in range(5):
            logits = rng.normal(scale=2.0, size=(8, 8))
            target = (rng.random((8, 8)) < 0.5).astype(float)
            _, grad = dice_loss(logits, target)
            for _ in range(12):
                i = int(rng.integers(0, 8))
                j = int(rng.integers(0, 8))
                zp = logits.copy()
                zp[i, j] += h
                zm = logits.copy()
                zm[i, j] -= h
                fd = (dice_loss(zp, target)[0] - dice_loss(zm, target)[0]) / (2 * h)
                denom = max(abs(fd), abs(grad[i, j]), 1e-12)
                assert abs(fd - grad[i, j]) / denom < 1e-4

    def test_loss_in_unit_interval(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            logits = rng.normal(scale=5.0, size=(6, 6))
            target = (rng.random((6, 6)) < 0.5).astype(float)
            loss, _ = dice_loss(logits, target)
            assert 0.0 <= loss < 1.0

    def test_batch_matches_per_sample(self):
        rng = np.random.default_rng(19)
        logits = rng.normal(size=(4, 6, 6))
        targets = (rng.random((4, 6, 6)) < 0.5).astype(float)
        losses, grads = dice_loss_batch(logits, targets)
        for i in range(4):
            loss_i, grad_i = dice_loss(logits[i], targets[i])
            assert losses[i] == pytest.approx(loss_i)
            assert np.allclose(grads[i], grad_i)


class TestHausdorff:
    def test_identical_masks(self):
        m = np.zeros((5, 5), dtype=bool)
        m[1:3, 1:3] = True
        assert hausdorff_distance(m, m) == 0.0

    def test_three_four_five(self):
        a = np.zeros((5, 6), dtype=bool)
        b = np.zeros((5, 6), dtype=bool)
        a[0, 0] = True
        b[3, 4] = True
        assert hausdorff_distance(a, b) == pytest.approx(5.0)

    def test_one_empty_gives_diagonal(self):
        a = np.zeros((3, 4), dtype=bool)
        b = np.zeros((3, 4), dtype=bool)
        a[1, 1] = True
        assert hausdorff_distance(a, b) == pytest.approx(math.sqrt(13.0))

    def test_both_empty(self):
        z = np.zeros((4, 4), dtype=bool)
        assert hausdorff_distance(z, z) == 0.0

    def test_matches_brute_force_on_random_masks(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            a = rng.random((10, 10)) < 0.15
            b = rng.random((10, 10)) < 0.15
            assert hausdorff_distance(a, b) == pytest.approx(hausdorff_brute_force(a, b))

    def test_symmetry(self):
        rng = np.random.default_rng(29)
        a = rng.random((12, 12)) < 0.2
        b = rng.random((12, 12)) < 0.2
        assert hausdorff_distance(a, b) == hausdorff_distance(b, a)

    def test_percentile_variant_bounded_by_exact(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            a = rng.random((12, 12)) < 0.25
            b = rng.random((12, 12)) < 0.25
            if not (a.any() and b.any()):
                continue
            exact = hausdorff_distance(a, b)
            hd95 = hausdorff_distance(a, b, percentile=95)
            assert hd95 <= exact + 1e-12

    def test_percentile_matches_brute_force(self):
        rng = np.random.default_rng(37)
        a = rng.random((10, 10)) < 0.3
        b = rng.random((10, 10)) < 0.3
        pa = list(zip(*np.nonzero(a)))
        pb = list(zip(*np.nonzero(b)))
        d_ab = [min(math.dist(p, q) for q in pb) for p in pa]
        d_ba = [min(math.dist(p, q) for q in pa) for p in pb]
        expected = max(np.percentile(d_ab, 95), np.percentile(d_ba, 95))
        assert hausdorff_distance(a, b, percentile=95) == pytest.approx(expected)


class TestSigmoid:
    def test_extremes_are_stable(self):
        out = sigmoid(np.array([-800.0, 0.0, 800.0]))
        assert out[0] == 0.0
        assert out[1] == 0.5
        assert out[2] == 1.0
        assert np.all(np.isfinite(out))
