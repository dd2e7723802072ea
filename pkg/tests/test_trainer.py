import csv
import dataclasses
import itertools
import tempfile
import unittest
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest

from exceptions import ConfigError, InvalidArgumentError
from logic.audio_features import FeatureConfig, FeatureMatrix, FeatureNormalizer
from logic.crnn_model import ModelConfig, build
from logic.dataset import Example, build_examples, generate_dataset, select_classes
from logic.event_decoding import Event
from logic.sed_metrics import (SplitReport, evaluate_split, events_to_segments, grid_to_segments,
                               score_split)
from logic.trainer import (EPOCH_LOG_HEADER, SWEEP_HEADER, EarlyStopping, SweepRow, TrainConfig,
                           dropout_sweep, fit, sweep_weight_pairs, replicate_weak_to_strong,
                           training_metric, weak_from_strong, weak_vector, weight_sweep)

FRAMES, BANDS = 20, 4


def small_model_config(**overrides) -> ModelConfig:
    kwargs = dict(num_classes=2, input_bands=BANDS, conv_filters=[2], freq_pools=[4], gru_units=2,
                  strong_head_dense=[2], weak_head_dense=[2], dropout_rate=0.0)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def toy_examples(count: int, seed: int) -> list[Example]:
    """Class 0 raises the low bands during its event, class 1 the high bands."""
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(count):
        values = 0.1 * rng.standard_normal((FRAMES, BANDS))
        cls = i % 2
        values[5:15, 2 * cls:2 * cls + 2] += 2.0
        examples.append(Example(f"toy_{i}.wav", FeatureMatrix(values, 0.02), {cls},
                                [Event(cls, 0.1, 0.3)], FRAMES * 0.02))
    return examples


class TestWeakTargets(unittest.TestCase):

    def test_replicate_then_collapse_is_identity(self):
        for bits in itertools.product((0, 1), repeat=4):
            vector = np.array(bits, dtype=float)
            grid = replicate_weak_to_strong(vector, 7)
            self.assertEqual(grid.shape, (7, 4))
            self.assertEqual(weak_from_strong(grid, 0.5), {i for i, b in enumerate(bits) if b})

    def test_replicate_then_collapse_for_every_class_count(self):
        rng = np.random.default_rng(5)
        for num_classes in range(1, 11):
            frames = int(rng.integers(1, 50))
            with self.subTest(num_classes=num_classes, frames=frames):
                for bits in itertools.product((0, 1), repeat=num_classes):
                    grid = replicate_weak_to_strong(np.array(bits, dtype=float), frames)
                    self.assertEqual(grid.shape, (frames, num_classes))
                    self.assertEqual(weak_from_strong(grid, 0.5), {i for i, b in enumerate(bits) if b})

    def test_replicate_needs_frames(self):
        with self.assertRaises(InvalidArgumentError):
            replicate_weak_to_strong(np.ones(3), 0)

    def test_weak_vector(self):
        npt.assert_array_equal(weak_vector({0, 2}, 4), [1, 0, 1, 0])
        npt.assert_array_equal(weak_vector(set(), 2), [0, 0])


class TestModelSelection(unittest.TestCase):

    def test_training_metric(self):
        self.assertAlmostEqual(training_metric(43.3, 0.84), -0.407)
        self.assertAlmostEqual(training_metric(0.0, 1.02), -1.02)
        self.assertEqual(training_metric(100.0, 0.0), 1.0)
        self.assertEqual(training_metric(40.0, None), 0.4)

    def test_early_stopping_on_plateau(self):
        stopper = EarlyStopping(patience=2)
        improvements = []
        for epoch, score in enumerate([0.1, 0.1, 0.1], start=1):
            improvements.append(stopper.update(epoch, score))
        self.assertEqual(improvements, [True, False, False])
        self.assertTrue(stopper.should_stop)
        self.assertEqual(stopper.best_epoch, 1)

    def test_improvement_resets_patience(self):
        stopper = EarlyStopping(patience=2)
        stopper.update(1, 0.1)
        stopper.update(2, 0.0)
        stopper.update(3, 0.2)
        self.assertFalse(stopper.should_stop)
        self.assertEqual(stopper.best_epoch, 3)


class TestTrainConfig(unittest.TestCase):

    def test_defaults_are_valid(self):
        TrainConfig().validate()

    def test_invalid(self):
        cases = [
            dict(strong_weight=-1.0),
            dict(strong_weight=0.0, weak_weight=0.0),
            dict(max_epochs=0),
            dict(max_epochs=10, patience=10),
            dict(patience=0),
            dict(batch_size=0),
            dict(dropout_rate=1.0),
            dict(lr=0.0),
            dict(metric_segment_s=0.0),
            dict(threads=0),
        ]
        for kwargs in cases:
            with self.subTest(**kwargs):
                with self.assertRaises(ConfigError):
                    TrainConfig(**kwargs).validate()

    def test_one_zero_weight_is_allowed(self):
        TrainConfig(weak_weight=0.0).validate()


class TestWeightPairs(unittest.TestCase):

    def test_default_grid(self):
        self.assertEqual(sweep_weight_pairs(), [
            (0.002, 1.0), (0.02, 1.0), (0.2, 1.0), (1.0, 1.0), (1.0, 0.2), (1.0, 0.02), (1.0, 0.002)])

    def test_custom_weights(self):
        self.assertEqual(sweep_weight_pairs([0.5]), [(0.5, 1.0), (1.0, 0.5)])
        self.assertEqual(sweep_weight_pairs([2.0, 1.0]), [(1.0, 1.0), (2.0, 1.0)])

    def test_invalid_weights(self):
        with self.assertRaises(InvalidArgumentError):
            sweep_weight_pairs([])
        with self.assertRaises(InvalidArgumentError):
            sweep_weight_pairs([0.0, 1.0])

    def test_sweep_row_csv(self):
        row = SweepRow(1.0, 0.002, 0.15, SplitReport(50.0, 25.0, 33.3333), 4)
        self.assertEqual(row.csv_row(), ['1', '0.002', '50.0000', '25.0000', '33.3333', 'n/a', 'n/a'])
        self.assertEqual(row.csv_row(include_dropout=True)[0], '0.15')
        self.assertEqual(len(row.csv_row()), len(SWEEP_HEADER))


class TestFit(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.train = toy_examples(6, seed=0)
        self.validation = toy_examples(2, seed=1)
        self.cfg = TrainConfig(max_epochs=3, patience=2, batch_size=4, dropout_rate=0.0, lr=1e-2)

    def tearDown(self):
        self.tmp.cleanup()

    def test_fit_writes_epoch_log(self):
        log_path = self.dir / 'logs' / 'run.csv'
        result = fit(build(small_model_config()), self.train, self.validation, self.cfg, log_path)
        self.assertTrue(1 <= len(result.history) <= 3)
        self.assertTrue(1 <= result.best_epoch <= len(result.history))
        self.assertEqual(result.best_metric, max(r.metric for r in result.history))
        with open(log_path, newline='', encoding='utf-8') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], EPOCH_LOG_HEADER)
        self.assertEqual(len(rows), len(result.history) + 1)
        self.assertEqual(sum(row[-1] == '1' for row in rows[1:]),
                         sum(r.is_best for r in result.history))

    def test_fit_is_reproducible(self):
        first = fit(build(small_model_config()), self.train, self.validation, self.cfg)
        second = fit(build(small_model_config()), self.train, self.validation, self.cfg)
        self.assertEqual([r.total_loss for r in first.history], [r.total_loss for r in second.history])

    def test_losses_are_finite_and_positive(self):
        result = fit(build(small_model_config()), self.train, self.validation, self.cfg)
        for report in result.history:
            self.assertGreater(report.total_loss, 0.0)
            self.assertTrue(np.isfinite(report.total_loss))

    def test_empty_splits(self):
        model = build(small_model_config())
        with self.assertRaises(InvalidArgumentError):
            fit(model, [], self.validation, self.cfg)
        with self.assertRaises(InvalidArgumentError):
            fit(model, self.train, [], self.cfg)

    def test_mixed_frame_counts(self):
        odd = toy_examples(1, seed=2)[0]
        odd.features = FeatureMatrix(odd.features.values[:10], 0.02)
        with self.assertRaises(ConfigError):
            fit(build(small_model_config()), self.train + [odd], self.validation, self.cfg)

    def test_weak_only_validation_warns(self):
        for example in self.validation:
            example.strong = None
        with self.assertLogs('logic.trainer', level='WARNING'):
            result = fit(build(small_model_config()), self.train, self.validation, self.cfg)
        self.assertTrue(all(r.strong_er is None for r in result.history))


class TestSweeps(unittest.TestCase):

    def setUp(self):
        self.train = toy_examples(4, seed=0)
        self.validation = toy_examples(2, seed=1)
        self.cfg = TrainConfig(max_epochs=2, patience=1, batch_size=4, dropout_rate=0.0)

    def test_weight_sweep_rows_follow_pairs(self):
        pairs = [(1.0, 1.0), (1.0, 0.002)]
        rows = weight_sweep(self.train, self.validation, pairs, small_model_config(), self.cfg)
        self.assertEqual([(r.strong_weight, r.weak_weight) for r in rows], pairs)

    def test_dropout_sweep(self):
        rows = dropout_sweep(self.train, self.validation, [0.0, 0.5], small_model_config(), self.cfg)
        self.assertEqual([r.dropout_rate for r in rows], [0.0, 0.5])
        self.assertTrue(all((r.strong_weight, r.weak_weight) == (1.0, 1.0) for r in rows))
        with self.assertRaises(InvalidArgumentError):
            dropout_sweep(self.train, self.validation, [], small_model_config(), self.cfg)

    def test_sweeps_repeat_exactly_with_the_same_seed(self):
        pairs = [(1.0, 1.0), (0.2, 1.0)]
        config = small_model_config(seed=3)
        cfg = TrainConfig(max_epochs=2, patience=1, batch_size=2, dropout_rate=0.25, seed=3)
        first = weight_sweep(self.train, self.validation, pairs, config, cfg)
        second = weight_sweep(self.train, self.validation, pairs, config, cfg)
        self.assertEqual([r.csv_row() for r in first], [r.csv_row() for r in second])
        self.assertEqual([r.best_epoch for r in first], [r.best_epoch for r in second])

        first = dropout_sweep(self.train, self.validation, [0.0, 0.5], config, cfg)
        second = dropout_sweep(self.train, self.validation, [0.0, 0.5], config, cfg)
        self.assertEqual([r.csv_row(include_dropout=True) for r in first],
                         [r.csv_row(include_dropout=True) for r in second])

@pytest.mark.slow
class TestLearnsFromWeakLabels(unittest.TestCase):
    """Trains a small CRNN on synthetic clips and compares it with replicated clip labels."""

    CLASSES = 4

    def split(self, clips: int, seed: int) -> list[Example]:
        labeled, manifest = generate_dataset(clips, select_classes(self.CLASSES, 'default'),
                                             clip_s=10.0, seed=seed)
        return build_examples(labeled, manifest.vocabulary, FeatureConfig())

    def test_beats_replicated_weak_labels(self):
        train, validation = self.split(48, seed=0), self.split(24, seed=1)
        normalizer = FeatureNormalizer().fit([e.features for e in train])
        train = [dataclasses.replace(e, features=normalizer.apply(e.features)) for e in train]
        validation = [dataclasses.replace(e, features=normalizer.apply(e.features)) for e in validation]

        model = build(ModelConfig(num_classes=self.CLASSES, conv_filters=[8, 8, 8], gru_units=8,
                                  strong_head_dense=[16, self.CLASSES],
                                  weak_head_dense=[8, self.CLASSES], dropout_rate=0.1))
        cfg = TrainConfig(max_epochs=30, patience=10, batch_size=8, lr=3e-3, dropout_rate=0.1)
        fit(model, train, validation, cfg)
        report = evaluate_split(model, validation)

        replicated = []
        for example in validation:
            grid = replicate_weak_to_strong(weak_vector(example.weak, self.CLASSES),
                                            example.features.num_frames)
            replicated.append((
                events_to_segments(example.strong, 1.0, example.duration_s, self.CLASSES),
                grid_to_segments(grid, example.features.frame_hop_s, 1.0, example.duration_s)))
        references = [set(e.weak) for e in validation]
        baseline = score_split(references, references, replicated)

        self.assertGreaterEqual(report.f_score, 60.0)
        self.assertLess(report.strong_er, baseline.strong_er)


if __name__ == '__main__':
    unittest.main()
