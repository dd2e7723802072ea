import unittest

import numpy as np

from exceptions import InvalidArgumentError
from logic.gradcheck import (DEFAULT_TOLERANCE, OPERATORS, FaultyBackward, check_operator,
                             grad_check, run_suite)
from logic.layers import Dense


class TestGradCheck(unittest.TestCase):

    def test_linear_dense_is_exact(self):
        rng = np.random.default_rng(0)
        layer = Dense(4, 3, rng, 'linear')
        self.assertLess(grad_check(layer, rng.standard_normal((2, 5, 4))), 1e-7)

    def test_faulty_backward_is_detected(self):
        rng = np.random.default_rng(0)
        layer = FaultyBackward(Dense(4, 3, rng, 'tanh'))
        self.assertGreater(grad_check(layer, rng.standard_normal((2, 5, 4))), 1e-2)

    def test_faulty_backward_without_parameters_scales_input_gradient(self):
        rng = np.random.default_rng(1)
        layer, x = OPERATORS['sigmoid'](rng)
        self.assertGreater(grad_check(FaultyBackward(layer), x), 1e-2)


class TestOperatorSuite(unittest.TestCase):

    def test_every_operator_passes(self):
        for name in OPERATORS:
            with self.subTest(operator=name):
                result = check_operator(name, seed=0, seeds=3)
                self.assertTrue(result.passed, f"{name}: {result.max_error:.3e}")
                self.assertEqual(result.tolerance, DEFAULT_TOLERANCE)

    def test_fault_injection_names_the_operator(self):
        results = run_suite(seeds=1, inject_fault='dense', operators=['dense', 'tanh'])
        failed = [r.operator for r in results if not r.passed]
        self.assertEqual(failed, ['dense'])

    def test_report_is_reproducible(self):
        first = run_suite(seed=5, seeds=2, operators=['bigru', 'batch_norm'])
        second = run_suite(seed=5, seeds=2, operators=['bigru', 'batch_norm'])
        self.assertEqual([r.max_error for r in first], [r.max_error for r in second])

    def test_unknown_operator(self):
        with self.assertRaises(InvalidArgumentError):
            check_operator('softmax')
        with self.assertRaises(InvalidArgumentError):
            run_suite(inject_fault='softmax')


if __name__ == '__main__':
    unittest.main()
