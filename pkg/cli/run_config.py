"""
Run configuration: dataclass defaults, overridden by a config file, overridden
by command-line flags.

Config files are read with configparser. Section headers are optional and
only group keys for the reader; every key lives in one flat namespace.
"""
import argparse
import configparser
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from exceptions import ConfigError
from logic.audio_features import FeatureConfig
from logic.crnn_model import ModelConfig
from logic.event_decoding import DEFAULT_THRESHOLD
from logic.trainer import TrainConfig
from .constants import DEFAULT_CONFIG_FILE

logger = logging.getLogger(__name__)

DEFAULT_SECTION = 'settings'


@dataclass
class DecodingConfig:
    """Turns probability grids into labels and events."""
    threshold: float = DEFAULT_THRESHOLD
    median_width: int = 1
    min_gap_s: float = 0.0

    def validate(self) -> "DecodingConfig":
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}.")
        if self.median_width < 1 or self.median_width % 2 == 0:
            raise ConfigError(f"median_width must be a positive odd number, got {self.median_width}.")
        if self.min_gap_s < 0:
            raise ConfigError(f"min_gap_s must be nonnegative, got {self.min_gap_s}.")
        return self


@dataclass
class RunConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    decoding: DecodingConfig = field(default_factory=DecodingConfig)
    architecture: str = 'crnn'
    conv_filters: list[int] = field(default_factory=lambda: [96, 96, 96])
    freq_pools: list[int] = field(default_factory=lambda: [5, 4, 2])
    gru_units: int = 48
    strong_head_hidden: list[int] = field(default_factory=lambda: [48])
    weak_head_hidden: list[int] = field(default_factory=lambda: [16])
    context_frames: int = 5
    baseline_hidden: list[int] = field(default_factory=lambda: [50, 50])
    dtype: str = 'float64'
    threads: int = 1

    def model_config(self, num_classes: int) -> ModelConfig:
        """The network layout for a vocabulary of num_classes labels."""
        return ModelConfig(
            architecture=self.architecture,
            num_classes=num_classes,
            input_bands=self.features.num_mel_bands,
            conv_filters=list(self.conv_filters),
            freq_pools=list(self.freq_pools),
            gru_units=self.gru_units,
            strong_head_dense=[*self.strong_head_hidden, num_classes],
            weak_head_dense=[*self.weak_head_hidden, num_classes],
            dropout_rate=self.training.dropout_rate,
            context_frames=self.context_frames,
            baseline_hidden=list(self.baseline_hidden),
            seed=self.training.seed,
            dtype=self.dtype,
        ).validate()

    def train_config(self) -> TrainConfig:
        """Training settings; validation scoring uses the decoding threshold and thread count."""
        cfg = dataclasses.replace(self.training, threshold=self.decoding.threshold,
                                  threads=self.threads)
        if self.architecture == 'baseline' and cfg.weak_weight != 0:
            logger.info("The baseline predicts frame-wise only; training it with weak weight 0.")
            cfg = dataclasses.replace(cfg, weak_weight=0.0)
        return cfg.validate()


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(',') if v.strip()]


def _optional_int(text: str) -> int | None:
    return int(text) if text.strip() else None


# Config key -> (group, converter). Group None means a RunConfig field.
CONFIG_KEYS: dict[str, tuple[str | None, Callable[[str], object]]] = {
    'window_ms': ('features', float),
    'overlap_fraction': ('features', float),
    'num_mel_bands': ('features', int),
    'fmin': ('features', float),
    'fmax': ('features', float),
    'fft_size': ('features', _optional_int),
    'log_floor': ('features', float),
    'architecture': (None, str),
    'conv_filters': (None, _int_list),
    'freq_pools': (None, _int_list),
    'gru_units': (None, int),
    'strong_head_hidden': (None, _int_list),
    'weak_head_hidden': (None, _int_list),
    'context_frames': (None, int),
    'baseline_hidden': (None, _int_list),
    'dtype': (None, str),
    'threads': (None, int),
    'strong_weight': ('training', float),
    'weak_weight': ('training', float),
    'max_epochs': ('training', int),
    'patience': ('training', int),
    'batch_size': ('training', int),
    'dropout_rate': ('training', float),
    'lr': ('training', float),
    'seed': ('training', int),
    'metric_segment_s': ('training', float),
    'threshold': ('decoding', float),
    'median_width': ('decoding', int),
    'min_gap_s': ('decoding', float),
}


def read_config_file(path: str | Path) -> dict[str, object]:
    """
    Parses a config file into {key: typed value}.

    Raises:
        ConfigError: if the file cannot be read or parsed, a key is unknown or
            repeated across sections, or a value does not convert.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e

    parser = configparser.ConfigParser(inline_comment_prefixes=('#', ';'), interpolation=None)
    try:
        try:
            parser.read_string(text, source=str(path))
        except configparser.MissingSectionHeaderError:
            parser = configparser.ConfigParser(inline_comment_prefixes=('#', ';'),
                                               interpolation=None)
            parser.read_string(f"[{DEFAULT_SECTION}]\n{text}", source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"Cannot parse config file {path}: {e}") from e

    values: dict[str, object] = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in CONFIG_KEYS:
                raise ConfigError(f"Unknown config key '{key}' in section [{section}] of {path}.")
            if key in values:
                raise ConfigError(f"Config key '{key}' appears more than once in {path}.")
            try:
                values[key] = CONFIG_KEYS[key][1](raw)
            except ValueError as e:
                raise ConfigError(f"Bad value '{raw}' for config key '{key}' in {path}.") from e
    logger.debug("Read %d config values from %s.", len(values), path)
    return values


def build_run_config(values: dict[str, object]) -> RunConfig:
    """Builds a RunConfig from flat config values; absent keys keep their defaults."""
    unknown = set(values) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"Unknown config keys: {sorted(unknown)}.")
    grouped: dict[str | None, dict[str, object]] = {None: {}, 'features': {}, 'training': {},
                                                    'decoding': {}}
    for key, value in values.items():
        grouped[CONFIG_KEYS[key][0]][key] = value
    try:
        features = FeatureConfig(**grouped['features'])
        training = TrainConfig(**grouped['training'])
        decoding = DecodingConfig(**grouped['decoding'])
    except TypeError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    run_config = RunConfig(features=features, training=training, decoding=decoding,
                           **grouped[None])
    features.validate()
    decoding.validate()
    if run_config.threads < 1:
        raise ConfigError(f"threads must be at least 1, got {run_config.threads}.")
    return run_config


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """
    Layers the config file (--config, else config.ini next to main.py when
    present) and every command-line flag that maps to a config key.
    """
    values: dict[str, object] = {}
    config_path = getattr(args, 'config', None)
    if config_path is not None:
        values.update(read_config_file(config_path))
    elif DEFAULT_CONFIG_FILE.is_file():
        values.update(read_config_file(DEFAULT_CONFIG_FILE))

    overrides = {key: getattr(args, key) for key in CONFIG_KEYS
                 if getattr(args, key, None) is not None}
    if overrides:
        logger.debug("Command-line overrides: %s", overrides)
    values.update(overrides)
    return build_run_config(values)
