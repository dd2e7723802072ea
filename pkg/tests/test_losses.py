import math
import unittest

import numpy as np
import numpy.testing as npt

from exceptions import InvalidArgumentError, ShapeError
from logic.gradcheck import BCEHarness, CombinedLossHarness, grad_check
from logic.losses import CLIP_EPSILON, bce_loss, combined_loss


class TestBceLoss(unittest.TestCase):

    def test_half_probability_costs_log_two(self):
        loss, grad = bce_loss(np.full((2, 3), 0.5), np.array([[0, 1, 0], [1, 1, 0]]))
        self.assertAlmostEqual(loss, math.log(2.0))
        npt.assert_allclose(grad, np.where([[0, 1, 0], [1, 1, 0]], -2.0, 2.0) / 6)

    def test_saturated_predictions_are_clipped(self):
        loss, grad = bce_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        self.assertAlmostEqual(loss, -math.log(CLIP_EPSILON), places=6)
        self.assertTrue(np.all(np.isfinite(grad)))

    def test_perfect_prediction_is_nearly_free(self):
        loss, _ = bce_loss(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        self.assertLess(loss, 1e-6)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            bce_loss(np.zeros(3), np.zeros(4))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        harness = BCEHarness(rng.integers(0, 2, (4, 3)).astype(float))
        self.assertLess(grad_check(harness, rng.uniform(0.05, 0.95, (4, 3))), 1e-5)


class TestCombinedLoss(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(1)
        self.strong_pred = rng.uniform(0.05, 0.95, (6, 3))
        self.strong_target = rng.integers(0, 2, (6, 3)).astype(float)
        self.weak_pred = rng.uniform(0.05, 0.95, 3)
        self.weak_target = np.array([1.0, 0.0, 1.0])

    def _loss(self, strong_weight, weak_weight):
        return combined_loss(self.strong_pred, self.strong_target, self.weak_pred,
                             self.weak_target, strong_weight, weak_weight)

    def test_total_is_weighted_sum(self):
        result = self._loss(0.2, 1.0)
        self.assertAlmostEqual(result.total, 0.2 * result.strong_loss + result.weak_loss)

    def test_zero_strong_weight_blocks_strong_gradient(self):
        result = self._loss(0.0, 1.0)
        npt.assert_array_equal(result.grad_strong, 0.0)
        _, weak_only = bce_loss(self.weak_pred, self.weak_target)
        npt.assert_array_equal(result.grad_weak, weak_only)
        self.assertAlmostEqual(result.total, result.weak_loss)

    def test_gradients_scale_linearly_with_weights(self):
        base = self._loss(1.0, 1.0)
        scaled = self._loss(0.002, 3.0)
        npt.assert_allclose(scaled.grad_strong, 0.002 * base.grad_strong)
        npt.assert_allclose(scaled.grad_weak, 3.0 * base.grad_weak)

    def test_negative_weight_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            self._loss(-0.1, 1.0)

    def test_gradient_matches_finite_differences(self):
        harness = CombinedLossHarness(self.strong_target, self.weak_target, 0.02, 1.0)
        packed = np.vstack([self.strong_pred, self.weak_pred[None, :]])
        self.assertLess(grad_check(harness, packed), 1e-5)


if __name__ == '__main__':
    unittest.main()
