import csv
import io
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

import main
from cli.commands import _resolve_class
from cli.constants import EXIT_OK
from exceptions import InvalidArgumentError
from logic.annotations import read_strong, read_weak
from logic.audio_features import AudioClip, FeatureConfig, FeatureNormalizer
from logic.checkpoint import load_checkpoint, save_checkpoint
from logic.crnn_model import ModelConfig, build
from logic.dataset import load_manifest
from logic.feature_io import read_feature_matrix, write_wav

SMALL_MODEL = """\
[model]
conv_filters = 4,4,4
gru_units = 4
strong_head_hidden = 4
weak_head_hidden = 4

[training]
max_epochs = 2
patience = 1
batch_size = 4
"""


class TestResolveClass(unittest.TestCase):

    VOCABULARY = ['beep', 'chirp', 'hiss']

    def test_by_index_and_name(self):
        self.assertEqual(_resolve_class('2', self.VOCABULARY), 2)
        self.assertEqual(_resolve_class('chirp', self.VOCABULARY), 1)

    def test_unknown_class(self):
        for ref in ('3', 'hum'):
            with self.subTest(ref=ref):
                with self.assertRaises(InvalidArgumentError) as cm:
                    _resolve_class(ref, self.VOCABULARY)
                self.assertEqual(cm.exception.code, 'UNKNOWN_CLASS')


@pytest.mark.slow
@patch('main.logger_setup.setup_logging', return_value=None)
class TestWorkflow(unittest.TestCase):
    """synth -> train -> predict -> eval -> saliency with a very small network."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.config = self.dir / 'small.ini'
        self.config.write_text(SMALL_MODEL, encoding='utf-8')

    def tearDown(self):
        self.tmp.cleanup()

    def wsed(self, *argv) -> str:
        stdout = io.StringIO()
        with redirect_stdout(stdout), redirect_stderr(io.StringIO()):
            code = main.main(['--config', str(self.config), *map(str, argv)])
        self.assertEqual(code, EXIT_OK, stdout.getvalue())
        return stdout.getvalue()

    def synth(self, name: str, clips: int, seed: int) -> Path:
        self.wsed('synth', '--out', self.dir / name, '--clips', clips, '--classes', 2,
                  '--clip-seconds', 4, '--seed', seed, '--split', name)
        return self.dir / name / 'manifest.tsv'

    def test_full_workflow(self, mock_logging):
        train = self.synth('train', 6, 0)
        validation = self.synth('validation', 3, 1)
        self.assertEqual(load_manifest(validation).vocabulary, ['beep', 'chirp'])

        checkpoint_path = self.dir / 'model.wsedc'
        out = self.wsed('train', '--train', train, '--validation', validation, '--out', checkpoint_path)
        self.assertIn('Best epoch', out)
        self.assertTrue(checkpoint_path.with_suffix('.csv').is_file())
        self.assertEqual(load_checkpoint(checkpoint_path).vocabulary, ['beep', 'chirp'])

        predictions = self.dir / 'predictions'
        self.wsed('predict', '--checkpoint', checkpoint_path, '--manifest', validation,
                  '--out', predictions, '--median', 3)
        strong = read_feature_matrix(predictions / 'clip_0000.strong.wsedf')
        self.assertEqual(strong.shape, (200, 2))
        self.assertTrue(np.all((strong >= 0) & (strong <= 1)))
        self.assertEqual(sorted(read_weak(predictions / 'weak.tsv')),
                         ['clip_0000.wav', 'clip_0001.wav', 'clip_0002.wav'])
        self.assertTrue((predictions / 'events.tsv').is_file())

        scores = self.dir / 'scores.csv'
        reference = self.dir / 'validation' / 'strong.tsv'
        line = self.wsed('eval', '--reference', reference, '--estimate', predictions / 'events.tsv',
                         '--duration', 4, '--csv', scores)
        self.assertTrue(line.startswith('P '))
        self.wsed('eval', '--reference', reference, '--estimate', reference, '--duration', 4,
                  '--csv', scores)
        with open(scores, newline='', encoding='utf-8') as f:
            rows = list(csv.reader(f))
        self.assertEqual(len(rows), 3)
        self.assertEqual(rows[2][3], '0.0000')

        self.wsed('saliency', '--checkpoint', checkpoint_path, '--wav',
                  self.dir / 'validation' / 'audio' / 'clip_0000.wav', '--class', 'chirp',
                  '--out', self.dir / 'saliency')
        for head in ('strong', 'weak'):
            saliency_map = read_feature_matrix(self.dir / 'saliency' / f'clip_0000.chirp.{head}.wsedf')
            self.assertEqual(saliency_map.shape, (200, 40))
            self.assertTrue((self.dir / 'saliency' / f'clip_0000.chirp.{head}.png').is_file())

    def test_predict_wav_without_events(self, mock_logging):
        train = self.synth('train', 4, 0)
        validation = self.synth('validation', 2, 1)
        checkpoint_path = self.dir / 'model.wsedc'
        self.wsed('train', '--train', train, '--validation', validation, '--out', checkpoint_path,
                  '--epochs', 2, '--patience', 1)
        predictions = self.dir / 'predictions'
        wav = self.dir / 'validation' / 'audio' / 'clip_0001.wav'
        self.wsed('predict', '--checkpoint', checkpoint_path, '--wav', wav, '--out', predictions,
                  '--no-events')
        self.assertEqual(list(read_weak(predictions / 'weak.tsv')), ['clip_0001.wav'])
        self.assertFalse((predictions / 'events.tsv').exists())

    def test_sweeps(self, mock_logging):
        train = self.synth('train', 4, 0)
        validation = self.synth('validation', 2, 1)

        weights_csv = self.dir / 'weights.csv'
        self.wsed('sweep', '--train', train, '--validation', validation, '--weights', '0.2,1',
                  '--out', weights_csv)
        with open(weights_csv, newline='', encoding='utf-8') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0][:2], ['strong_weight', 'weak_weight'])
        self.assertEqual([r[:2] for r in rows[1:]], [['0.2', '1'], ['1', '1'], ['1', '0.2']])

        dropout_csv = self.dir / 'dropout.csv'
        self.wsed('sweep', '--train', train, '--validation', validation, '--dropouts', '0,0.5',
                  '--out', dropout_csv)
        with open(dropout_csv, newline='', encoding='utf-8') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0][0], 'dropout_rate')
        self.assertEqual([r[0] for r in rows[1:]], ['0', '0.5'])


@patch('main.logger_setup.setup_logging', return_value=None)
class TestPredictWeakLabels(unittest.TestCase):
    """Clip labels written by predict follow the strong grid, not the weak head."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        model = build(ModelConfig(num_classes=2, input_bands=4, conv_filters=[2], freq_pools=[4],
                                  gru_units=2, strong_head_dense=[2], weak_head_dense=[2],
                                  dropout_rate=0.0, seed=1))
        params = model.parameters()
        params['strong_head.dense0.weight'].assign(np.zeros((4, 2)))
        params['strong_head.dense0.bias'].assign(np.full(2, -20.0))
        params['weak_head.dense0.weight'].assign(np.zeros((2, 2)))
        params['weak_head.dense0.bias'].assign(np.full(2, 20.0))
        self.checkpoint = self.dir / 'model.wsedc'
        save_checkpoint(self.checkpoint, model, FeatureNormalizer(), ['beep', 'chirp'],
                        FeatureConfig(num_mel_bands=4, fmax=8000.0))
        rng = np.random.default_rng(0)
        self.wav = self.dir / 'clip.wav'
        write_wav(self.wav, AudioClip(0.1 * rng.standard_normal(16000), 16000))

    def tearDown(self):
        self.tmp.cleanup()

    def test_quiet_strong_grid_gives_no_clip_labels(self, mock_logging):
        out = self.dir / 'predictions'
        with redirect_stdout(io.StringIO()), redirect_stderr(io.StringIO()):
            code = main.main(['predict', '--checkpoint', str(self.checkpoint), '--wav', str(self.wav),
                              '--out', str(out), '--no-events'])
        self.assertEqual(code, EXIT_OK)
        strong = read_feature_matrix(out / 'clip.strong.wsedf')
        self.assertLess(strong.max(), 0.5)
        self.assertEqual(read_weak(out / 'weak.tsv'), {'clip.wav': set()})


if __name__ == '__main__':
    unittest.main()
