import argparse
import io
import unittest
from contextlib import redirect_stderr

from cli.parser import (build_parser, dropout_list, dropout_rate, nonnegative_float,
                        odd_positive_int, positive_float, positive_int, probability, weight_list)
from exceptions import InvalidArgumentError


class TestArgumentTypes(unittest.TestCase):

    def test_accepted_values(self):
        self.assertEqual(positive_int('3'), 3)
        self.assertEqual(odd_positive_int('5'), 5)
        self.assertEqual(positive_float('0.5'), 0.5)
        self.assertEqual(nonnegative_float('0'), 0.0)
        self.assertEqual(dropout_rate('0'), 0.0)
        self.assertEqual(probability('0.25'), 0.25)
        self.assertEqual(weight_list('0.002, 1'), [0.002, 1.0])
        self.assertEqual(dropout_list('0.05,0.5'), [0.05, 0.5])

    def test_rejected_values(self):
        cases = [
            (positive_int, '0'), (positive_int, 'two'), (odd_positive_int, '4'),
            (positive_float, '0'), (nonnegative_float, '-0.1'), (dropout_rate, '1.0'),
            (probability, '1'), (probability, '0'), (weight_list, ''), (weight_list, ' , '),
            (weight_list, '0.1,0'), (dropout_list, ''), (dropout_list, '0.2,1.5'),
        ]
        for func, text in cases:
            with self.subTest(func=func.__name__, text=text):
                with self.assertRaises(argparse.ArgumentTypeError):
                    func(text)


class TestBuildParser(unittest.TestCase):

    def parse(self, argv):
        with redirect_stderr(io.StringIO()):
            return build_parser().parse_args(argv)

    def test_train_flags_map_to_config_keys(self):
        args = self.parse(['--threads', '2', 'train', '--train', 't.tsv', '--validation', 'v.tsv',
                           '--out', 'm.wsedc', '--model', 'baseline', '--dropout', '0.25',
                           '--epochs', '10', '--patience', '3', '--weak-weight', '0.002'])
        self.assertEqual(args.command, 'train')
        self.assertEqual(args.threads, 2)
        self.assertEqual(args.architecture, 'baseline')
        self.assertEqual(args.dropout_rate, 0.25)
        self.assertEqual(args.max_epochs, 10)
        self.assertEqual(args.weak_weight, 0.002)
        self.assertIsNone(args.strong_weight)
        self.assertIsNone(args.lr)

    def test_predict_decoding_flags(self):
        args = self.parse(['predict', '--checkpoint', 'm', '--wav', 'a.wav', 'b.wav', '--out', 'o',
                           '--threshold', '0.4', '--median', '5', '--min-gap', '0.1'])
        self.assertEqual(args.wav, ['a.wav', 'b.wav'])
        self.assertEqual((args.threshold, args.median_width, args.min_gap_s), (0.4, 5, 0.1))
        self.assertFalse(args.no_events)

    def test_sweep_defaults(self):
        args = self.parse(['sweep', '--train', 't', '--validation', 'v', '--out', 's.csv'])
        self.assertEqual(args.weights, [0.002, 0.02, 0.2, 1.0])
        self.assertIsNone(args.dropouts)
        self.assertFalse(hasattr(args, 'weak_weight'))
        args = self.parse(['sweep', '--train', 't', '--validation', 'v', '--out', 's.csv', '--dropouts'])
        self.assertEqual(args.dropouts, [0.05, 0.15, 0.25, 0.5, 0.75])

    def test_gradcheck_defaults(self):
        args = self.parse(['gradcheck'])
        self.assertEqual((args.seed, args.seeds, args.inject_fault), (0, 20, None))

    def test_usage_errors_raise(self):
        cases = [
            [],
            ['synth', '--out', 'd', '--clips', '0'],
            ['train', '--train', 't', '--validation', 'v', '--out', 'm', '--dropout', '1.0'],
            ['sweep', '--train', 't', '--validation', 'v', '--out', 's', '--weights', ''],
            ['predict', '--checkpoint', 'm', '--manifest', 'x', '--wav', 'a.wav', '--out', 'o'],
            ['predict', '--checkpoint', 'm', '--wav', 'a.wav', '--out', 'o', '--median', '2'],
            ['gradcheck', '--inject-fault', 'nope'],
            ['saliency', '--checkpoint', 'm', '--wav', 'a.wav', '--class', '0', '--out', 'o',
             '--head', 'middle'],
            ['unknown'],
        ]
        for argv in cases:
            with self.subTest(argv=argv):
                with self.assertRaises(InvalidArgumentError) as cm:
                    self.parse(argv)
                self.assertEqual(cm.exception.code, 'USAGE')

    def test_usage_goes_to_stderr(self):
        stderr = io.StringIO()
        with redirect_stderr(stderr), self.assertRaises(InvalidArgumentError):
            build_parser().parse_args(['synth'])
        self.assertIn('usage: wsed synth', stderr.getvalue())


if __name__ == '__main__':
    unittest.main()
