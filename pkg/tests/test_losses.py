import math

import numpy as np
import pytest

from mapreid.core import euclidean_distance_matrix
from mapreid.errors import DegenerateBatch, LabelOutOfRange, NonFiniteLoss
from mapreid.losses import (ClassifierHead, batch_hard_triplet_loss, combine_losses, cross_entropy_loss,
                            hardest_pairs)

from oracles import central_diff, exhaustive_triplet, rel_err


def _pk_batch(rng, p=4, k=4, d=6, spread=1.0):
    centers = rng.normal(size=(p, d)) * 2
    labels = np.repeat(np.arange(p), k)
    return centers[labels] + spread * rng.normal(size=(p * k, d)), labels


def _unique_selection(x, labels, gap=1e-4):
    dist = euclidean_distance_matrix(x, x)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    for i in range(len(labels)):
        dp = np.sort(dist[i, same[i]])[::-1]
        dn = np.sort(dist[i, labels != labels[i]])
        if dp.size > 1 and dp[0] - dp[1] < gap:
            return False
        if dn.size > 1 and dn[1] - dn[0] < gap:
            return False
    return True


class TestCrossEntropy:
    def test_uniform_logits(self, rng):
        head = ClassifierHead(np.zeros((5, 3)), np.zeros(5))
        loss, _, _ = cross_entropy_loss(rng.normal(size=(4, 3)), [0, 1, 2, 4], head)
        assert loss == pytest.approx(math.log(5), abs=1e-12)

    def test_dominant_true_logit(self):
        head = ClassifierHead(np.zeros((3, 2)), np.array([1e3, 0.0, 0.0]))
        loss, _, _ = cross_entropy_loss(np.ones((2, 2)), [0, 0], head)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_shift_invariance(self, rng):
        head = ClassifierHead.init(5, 4, rng)
        x = rng.normal(size=(8, 4))
        y = rng.integers(0, 5, 8)
        base = cross_entropy_loss(x, y, head)[0]
        shifted = ClassifierHead(head.weights, head.bias + 37.5)
        assert cross_entropy_loss(x, y, shifted)[0] == pytest.approx(base, abs=1e-12)

    def test_label_out_of_range(self, rng):
        head = ClassifierHead.init(3, 2, rng)
        with pytest.raises(LabelOutOfRange):
            cross_entropy_loss(np.ones((2, 2)), [0, 3], head)

    def test_finite_differences(self, rng):
        head = ClassifierHead.init(5, 6, rng)
        x = rng.normal(size=(8, 6))
        y = rng.integers(0, 5, 8)
        _, dx, (dw, db) = cross_entropy_loss(x, y, head)
        assert rel_err(dx, central_diff(lambda v: cross_entropy_loss(v, y, head)[0], x)) <= 1e-6
        num_w = central_diff(lambda w: cross_entropy_loss(x, y, ClassifierHead(w, head.bias))[0], head.weights)
        num_b = central_diff(lambda b: cross_entropy_loss(x, y, ClassifierHead(head.weights, b))[0], head.bias)
        assert rel_err(dw, num_w) <= 1e-6
        assert rel_err(db, num_b) <= 1e-6


class TestTriplet:
    def test_separated_batch(self):
        x = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]])
        loss, grad = batch_hard_triplet_loss(x, [0, 0, 1, 1], margin=0.3)
        assert loss == 0.0 and not grad.any()

    def test_coincident_negatives(self):
        x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        loss, _ = batch_hard_triplet_loss(x, [0, 0, 1, 1], margin=0.3)
        assert loss >= 0.3

    def test_matches_exhaustive_oracle(self, rng):
        for _ in range(20):
            x, y = _pk_batch(rng)
            loss, _ = batch_hard_triplet_loss(x, y, margin=0.3)
            assert loss == exhaustive_triplet(euclidean_distance_matrix(x, x), y, 0.3)

    def test_finite_differences(self, rng):
        while True:
            x, y = _pk_batch(rng)
            if _unique_selection(x, y):
                break
        _, grad = batch_hard_triplet_loss(x, y)
        num = central_diff(lambda v: batch_hard_triplet_loss(v, y)[0], x)
        assert rel_err(grad, num) <= 1e-5

    def test_rotation_invariance(self, rng):
        x, y = _pk_batch(rng, d=5)
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        assert batch_hard_triplet_loss(x @ q, y)[0] == pytest.approx(batch_hard_triplet_loss(x, y)[0], abs=1e-9)

    def test_gradient_sums_to_zero(self, rng):
        x, y = _pk_batch(rng, spread=2.0)
        loss, grad, active = batch_hard_triplet_loss(x, y, return_active=True)
        assert active > 0
        np.testing.assert_allclose(grad.sum(axis=0), 0.0, atol=1e-12)

    def test_degenerate_batch(self):
        with pytest.raises(DegenerateBatch):
            batch_hard_triplet_loss(np.eye(3), [0, 0, 1])
        with pytest.raises(DegenerateBatch):
            batch_hard_triplet_loss(np.eye(3), [0, 0, 0])

    def test_ties_lowest_index(self):
        dist = np.array([[0, 1, 1, 2, 2], [1, 0, 1, 2, 2], [1, 1, 0, 2, 2], [2, 2, 2, 0, 3], [2, 2, 2, 3, 0.0]])
        pos, neg, _ = hardest_pairs(dist, [0, 0, 0, 1, 1])
        assert pos.tolist() == [1, 0, 0, 4, 3]
        assert neg.tolist() == [3, 3, 3, 0, 0]


class TestCombine:
    def test_unit_weights(self):
        r = combine_losses(0.5, 0.25, 0.125)
        assert r.l_total == 0.875 and r.l_weighted == 0.875

    def test_ablation_rows(self):
        assert combine_losses(0.5, 0.25, 0.125, (1, 1, 0)).l_weighted == 0.75
        assert combine_losses(0.5, 0.25, 0.125, (0, 0, 1)).l_weighted == 0.125

    def test_all_zero(self):
        assert combine_losses(0, 0, 0).l_total == 0.0

    def test_linear(self, rng):
        a, b = rng.random(3), rng.random(3)
        w = (0.3, 2.0, 1.5)
        lhs = combine_losses(*(a + 2 * b), w).l_weighted
        rhs = combine_losses(*a, w).l_weighted + 2 * combine_losses(*b, w).l_weighted
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_non_finite(self):
        with pytest.raises(NonFiniteLoss):
            combine_losses(float("nan"), 0, 0)

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            combine_losses(1, 1, 1, (1, -1, 1))

    def test_log_line(self):
        line = combine_losses(0.5, 0.25, 0.125, active_triplets=3).log_line(7)
        assert line.split("\t") == ["7", "0.5000000000", "0.2500000000", "0.1250000000", "0.8750000000", "3"]
