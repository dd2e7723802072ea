"""
Command-line surface. Flags whose destination matches a config key override
the config file; see run_config.CONFIG_KEYS.
"""
import argparse
import sys

from exceptions import InvalidArgumentError
from logger_setup import LOG_LEVELS
from logic.crnn_model import ARCHITECTURES
from logic.dataset import PRESETS
from logic.gradcheck import DEFAULT_TOLERANCE, OPERATORS
from logic.saliency import HEADS
from logic.trainer import SWEEP_DROPOUTS, SWEEP_WEIGHTS
from .constants import APP_NAME, APP_VERSION


class CliArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so main() owns the exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise InvalidArgumentError(message, code='USAGE')


# --- Argument types ---

def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{text}' is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def odd_positive_int(text: str) -> int:
    value = positive_int(text)
    if value % 2 == 0:
        raise argparse.ArgumentTypeError(f"must be odd, got {value}")
    return value


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{text}' is not a number") from None


def positive_float(text: str) -> float:
    value = _float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def nonnegative_float(text: str) -> float:
    value = _float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {value}")
    return value


def dropout_rate(text: str) -> float:
    value = _float(text)
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"dropout rate must be in [0, 1), got {value}")
    return value


def probability(text: str) -> float:
    value = _float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {value}")
    return value


def weight_list(text: str) -> list[float]:
    """A nonempty comma-separated list of positive loss weights."""
    parts = [p.strip() for p in text.split(',') if p.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("the weight list is empty")
    return [positive_float(p) for p in parts]


def dropout_list(text: str) -> list[float]:
    parts = [p.strip() for p in text.split(',') if p.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("the dropout list is empty")
    return [dropout_rate(p) for p in parts]


# --- Option groups shared between commands ---

def _add_split_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--train', required=True, help="Training split manifest.")
    parser.add_argument('--validation', required=True, help="Validation split manifest.")


def _add_training_options(parser: argparse.ArgumentParser, loss_options: bool = True) -> None:
    group = parser.add_argument_group('training')
    group.add_argument('--model', dest='architecture', choices=ARCHITECTURES,
                       help="Network architecture (default: crnn).")
    if loss_options:
        group.add_argument('--strong-weight', type=nonnegative_float,
                           help="Weight of the frame-level loss term.")
        group.add_argument('--weak-weight', type=nonnegative_float,
                           help="Weight of the clip-level loss term.")
        group.add_argument('--dropout', dest='dropout_rate', type=dropout_rate,
                           help="Dropout rate in [0, 1).")
    group.add_argument('--epochs', dest='max_epochs', type=positive_int, help="Maximum epochs.")
    group.add_argument('--patience', type=positive_int,
                       help="Epochs without improvement before stopping.")
    group.add_argument('--seed', type=int, help="Seed for initialisation, dropout and shuffling.")
    group.add_argument('--batch-size', type=positive_int)
    group.add_argument('--lr', type=positive_float, help="Adam learning rate.")


def build_parser() -> CliArgumentParser:
    parser = CliArgumentParser(
        prog='wsed',
        description=f"{APP_NAME}: weakly supervised sound event detection.")
    parser.add_argument('--version', action='version', version=f"{APP_NAME} {APP_VERSION}")
    parser.add_argument('--config', help="Config file (default: config.ini next to main.py).")
    parser.add_argument('--threads', type=positive_int,
                        help="Worker threads for feature extraction, data loading and "
                             "validation scoring. Parameter updates stay on one thread.")
    parser.add_argument('--log-level', choices=sorted(LOG_LEVELS),
                        help="Overrides the LOG_LEVEL environment variable.")
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True

    # --- synth ---
    p = sub.add_parser('synth', help="Generate a synthetic labelled dataset.")
    p.add_argument('--out', required=True, help="Output directory.")
    p.add_argument('--clips', type=positive_int, default=200)
    p.add_argument('--classes', type=positive_int, default=4)
    p.add_argument('--preset', choices=sorted(PRESETS), default='default')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--polyphony', type=positive_int, default=2,
                   help="Maximum number of events per clip.")
    p.add_argument('--clip-seconds', type=positive_float, default=10.0)
    p.add_argument('--sample-rate', type=positive_int, default=44100)
    p.add_argument('--split', default='train', help="Split name stored in the manifest.")

    # --- train ---
    p = sub.add_parser('train', help="Train a model on weak labels.")
    _add_split_options(p)
    p.add_argument('--out', required=True, help="Checkpoint path.")
    p.add_argument('--log', help="Per-epoch CSV log (default: checkpoint path with .csv).")
    _add_training_options(p)

    # --- predict ---
    p = sub.add_parser('predict', help="Predict frame and clip labels.")
    p.add_argument('--checkpoint', required=True)
    inputs = p.add_mutually_exclusive_group(required=True)
    inputs.add_argument('--manifest', help="Predict every clip of a manifest.")
    inputs.add_argument('--wav', nargs='+', help="Predict the given WAV files.")
    p.add_argument('--out', required=True, help="Output directory.")
    p.add_argument('--threshold', type=probability)
    p.add_argument('--median', dest='median_width', type=odd_positive_int,
                   help="Median filter width in frames (1 disables).")
    p.add_argument('--min-gap', dest='min_gap_s', type=nonnegative_float,
                   help="Merge same-class events separated by less than this many seconds.")
    p.add_argument('--no-events', action='store_true', help="Skip writing decoded events.")

    # --- eval ---
    p = sub.add_parser('eval', help="Score estimate annotation files against references.")
    p.add_argument('--reference', required=True, help="Reference strong annotations.")
    p.add_argument('--estimate', required=True, help="Estimated strong annotations.")
    p.add_argument('--reference-weak', help="Reference weak labels.")
    p.add_argument('--estimate-weak', help="Estimated weak labels.")
    p.add_argument('--segment', type=positive_float, default=1.0, help="Segment length in seconds.")
    p.add_argument('--duration', type=positive_float, default=10.0, help="Clip length in seconds.")
    p.add_argument('--csv', help="Also append the scores to this CSV file.")

    # --- gradcheck ---
    p = sub.add_parser('gradcheck', help="Compare analytic and numeric gradients.")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--seeds', type=positive_int, default=20, help="Consecutive seeds per operator.")
    p.add_argument('--inject-fault', choices=sorted(OPERATORS), metavar='OPERATOR',
                   help="Corrupt this operator's backward pass.")
    p.add_argument('--tolerance', type=positive_float, default=DEFAULT_TOLERANCE)

    # --- saliency ---
    p = sub.add_parser('saliency', help="Input-gradient saliency of one class.")
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--wav', required=True)
    p.add_argument('--class', dest='class_ref', required=True, help="Class name or index.")
    p.add_argument('--head', choices=[*HEADS, 'both'], default='both')
    p.add_argument('--out', required=True, help="Output directory.")

    # --- sweep ---
    p = sub.add_parser('sweep', help="Loss-weight or dropout study.")
    _add_split_options(p)
    p.add_argument('--weights', type=weight_list, default=list(SWEEP_WEIGHTS),
                   help="Comma-separated loss weights (default: 0.002,0.02,0.2,1).")
    p.add_argument('--dropouts', type=dropout_list, nargs='?', const=list(SWEEP_DROPOUTS),
                   help="Comma-separated dropout rates; runs the dropout study instead "
                        "(without a value: 0.05,0.15,0.25,0.5,0.75).")
    p.add_argument('--out', required=True, help="CSV output path.")
    _add_training_options(p, loss_options=False)

    return parser
