"""
Convolutional-recurrent sound event detector with sequential strong and weak
heads, and the frame-wise MLP baseline.

Both models share one interface: forward_batch(x, mode) maps a B x T x F
feature batch to (strong B x T x C, weak B x C) probabilities, and
backward(grad_strong, grad_weak) pushes the two head gradients back through
the network, returning the gradient with respect to the input batch.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from exceptions import ConfigError, ShapeError
from .audio_features import FeatureMatrix
from .layers import (Activation, BatchNorm, ContextWindow, Conv2D, Dense, Dropout,
                     FlattenFrequency, MaxPoolFreq, Module, Sequential, TimeMax, TimeMean)
from .recurrent import BiGRU
from .tensor import INFER, Tensor

logger = logging.getLogger(__name__)

ARCHITECTURES = ('crnn', 'baseline')
DTYPES = {'float64': np.float64, 'float32': np.float32}


@dataclass
class ModelConfig:
    """
    Network layout. Empty head lists are filled with the default widths for
    num_classes ([48, C] for the strong head, [16, C] for the weak head).
    """
    architecture: str = 'crnn'
    num_classes: int = 17
    input_bands: int = 40
    conv_filters: list[int] = field(default_factory=lambda: [96, 96, 96])
    freq_pools: list[int] = field(default_factory=lambda: [5, 4, 2])
    gru_units: int = 48
    strong_head_dense: list[int] = field(default_factory=list)
    weak_head_dense: list[int] = field(default_factory=list)
    dropout_rate: float = 0.15
    context_frames: int = 5
    baseline_hidden: list[int] = field(default_factory=lambda: [50, 50])
    seed: int = 0
    dtype: str = 'float64'

    def __post_init__(self):
        if not self.strong_head_dense:
            self.strong_head_dense = [48, self.num_classes]
        if not self.weak_head_dense:
            self.weak_head_dense = [16, self.num_classes]

    def validate(self) -> "ModelConfig":
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(
                f"Unknown architecture '{self.architecture}'; expected one of {ARCHITECTURES}.")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be at least 1, got {self.num_classes}.")
        if self.input_bands < 1:
            raise ConfigError(f"input_bands must be at least 1, got {self.input_bands}.")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}.")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got '{self.dtype}'.")
        if self.architecture == 'baseline':
            if self.context_frames < 1 or self.context_frames % 2 == 0:
                raise ConfigError(
                    f"context_frames must be a positive odd number, got {self.context_frames}.")
            return self

        if len(self.conv_filters) != len(self.freq_pools) or not self.conv_filters:
            raise ConfigError("conv_filters and freq_pools must be nonempty and of equal length.")
        if any(p < 1 for p in self.freq_pools) or any(n < 1 for n in self.conv_filters):
            raise ConfigError("Filter counts and pool factors must be positive.")
        if int(np.prod(self.freq_pools)) != self.input_bands:
            raise ConfigError(
                f"Product of freq_pools {self.freq_pools} must equal input_bands "
                f"({self.input_bands}) so the frequency axis is reduced to 1.")
        if self.gru_units < 1:
            raise ConfigError(f"gru_units must be at least 1, got {self.gru_units}.")
        for name, widths in (('strong_head_dense', self.strong_head_dense),
                             ('weak_head_dense', self.weak_head_dense)):
            if not widths or widths[-1] != self.num_classes:
                raise ConfigError(
                    f"{name} must end in num_classes ({self.num_classes}), got {widths}.")
        return self

    @property
    def numpy_dtype(self):
        return DTYPES[self.dtype]


def _model_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for weight initialisation and dropout masks."""
    init_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(dropout_seq)


def _dense_stack(prefix: str, in_features: int, widths: list[int], dropout_rate: float,
                 init_rng, dropout_rng, dtype, hidden_activation: str = 'tanh'
                 ) -> list[tuple[str, Module]]:
    """Hidden layers with dropout, then a linear output layer."""
    layers: list[tuple[str, Module]] = []
    for i, width in enumerate(widths):
        last = i == len(widths) - 1
        activation = 'linear' if last else hidden_activation
        layers.append((f"{prefix}dense{i}", Dense(in_features, width, init_rng, activation, dtype)))
        if not last:
            layers.append((f"{prefix}dropout{i}", Dropout(dropout_rate, dropout_rng)))
        in_features = width
    return layers


class SedModel:
    """Shared bookkeeping for the detector networks."""
    config: ModelConfig

    def _blocks(self) -> dict[str, Module]:
        raise NotImplementedError

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def parameters(self) -> dict[str, Tensor]:
        return {f"{block_name}.{key}": tensor
                for block_name, block in self._blocks().items()
                for key, tensor in block.parameters().items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{block_name}.{key}": array
                for block_name, block in self._blocks().items()
                for key, array in block.buffers().items()}

    def load_buffers(self, buffers: dict[str, np.ndarray]) -> None:
        """Restores non-trainable state, e.g. batch-norm running statistics."""
        for block_name, block in self._blocks().items():
            if not isinstance(block, Sequential):
                continue
            for layer_name, layer in block.layers:
                if isinstance(layer, BatchNorm):
                    prefix = f"{block_name}.{layer_name}."
                    layer.load_buffers({key[len(prefix):]: value
                                        for key, value in buffers.items()
                                        if key.startswith(prefix)})

    def zero_grad(self) -> None:
        for tensor in self.parameters().values():
            tensor.zero_grad()

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.config.input_bands:
            raise ShapeError(
                f"Expected a B x T x {self.config.input_bands} feature batch, got {x.shape}.")
        if x.shape[1] < 1:
            raise ShapeError("Feature batch has no frames.")
        return np.asarray(x, dtype=self.config.numpy_dtype)

    def forward_batch(self, x: np.ndarray, mode: str = INFER) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def backward(self, grad_strong: np.ndarray, grad_weak: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class CRNN(SedModel):
    """
    [Conv3x3 -> BatchNorm -> ReLU -> Dropout -> MaxPoolFreq] x k -> BiGRU
    -> time-distributed dense strong head (sigmoid, T x C)
    -> mean over time of the strong pre-sigmoid activations -> dense weak head
    (sigmoid, C).
    """
    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        dtype = config.numpy_dtype
        init_rng, dropout_rng = _model_rngs(config.seed)
        rate = config.dropout_rate

        trunk: list[tuple[str, Module]] = []
        channels = 1
        for i, (filters, pool) in enumerate(zip(config.conv_filters, config.freq_pools)):
            trunk += [
                (f"conv{i}", Conv2D(channels, filters, init_rng, dtype)),
                (f"bn{i}", BatchNorm(filters, dtype=dtype)),
                (f"relu{i}", Activation('relu')),
                (f"dropout{i}", Dropout(rate, dropout_rng)),
                (f"pool{i}", MaxPoolFreq(pool)),
            ]
            channels = filters
        trunk += [
            ('flatten', FlattenFrequency()),
            ('bigru', BiGRU(channels, config.gru_units, init_rng, dtype)),
            ('gru_dropout', Dropout(rate, dropout_rng)),
        ]
        self.trunk = Sequential(trunk)
        self.strong_head = Sequential(_dense_stack(
            '', 2 * config.gru_units, config.strong_head_dense, rate, init_rng, dropout_rng, dtype))
        self.strong_output = Activation('sigmoid')
        self.weak_head = Sequential(
            [('time_mean', TimeMean())]
            + _dense_stack('', config.num_classes, config.weak_head_dense, rate,
                           init_rng, dropout_rng, dtype)
            + [('sigmoid', Activation('sigmoid'))])

    def _blocks(self):
        return {'trunk': self.trunk, 'strong_head': self.strong_head, 'weak_head': self.weak_head}

    def forward_batch(self, x, mode=INFER):
        x = self._check_input(x)
        hidden = self.trunk.forward(x[..., None], mode)
        strong_logits = self.strong_head.forward(hidden, mode)
        strong = self.strong_output.forward(strong_logits, mode)
        weak = self.weak_head.forward(strong_logits, mode)
        return strong, weak

    def backward(self, grad_strong, grad_weak):
        # Both heads meet at the strong pre-sigmoid activations.
        grad_logits = self.strong_output.backward(grad_strong) + self.weak_head.backward(grad_weak)
        grad_hidden = self.strong_head.backward(grad_logits)
        return self.trunk.backward(grad_hidden)[..., 0]


class BaselineMLP(SedModel):
    """
    Frame-wise MLP over a context of neighbouring frames. Its weak output is
    the maximum of the strong output over time.
    """
    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        dtype = config.numpy_dtype
        init_rng, dropout_rng = _model_rngs(config.seed)
        in_features = config.context_frames * config.input_bands
        self.network = Sequential(
            [('context', ContextWindow(config.context_frames))]
            + _dense_stack('', in_features, list(config.baseline_hidden) + [config.num_classes],
                           config.dropout_rate, init_rng, dropout_rng, dtype,
                           hidden_activation='relu')
            + [('sigmoid', Activation('sigmoid'))])
        self.time_max = TimeMax()

    def _blocks(self):
        return {'network': self.network}

    def forward_batch(self, x, mode=INFER):
        x = self._check_input(x)
        strong = self.network.forward(x, mode)
        return strong, self.time_max.forward(strong, mode)

    def backward(self, grad_strong, grad_weak):
        return self.network.backward(grad_strong + self.time_max.backward(grad_weak))


def build(config: ModelConfig) -> SedModel:
    """Builds a freshly initialised model; weights depend only on config.seed."""
    model: SedModel = CRNN(config) if config.architecture == 'crnn' else BaselineMLP(config)
    logger.info("Built %s model with %d trainable parameters (C=%d).",
                config.architecture, count_parameters(model), config.num_classes)
    return model


def build_baseline(num_classes: int, context_frames: int = 5, input_bands: int = 40,
                   dropout_rate: float = 0.2, seed: int = 0, dtype: str = 'float64') -> SedModel:
    return build(ModelConfig(architecture='baseline', num_classes=num_classes,
                             input_bands=input_bands, context_frames=context_frames,
                             dropout_rate=dropout_rate, seed=seed, dtype=dtype))


def forward(model: SedModel, features: FeatureMatrix, mode: str = INFER
            ) -> tuple[np.ndarray, np.ndarray]:
    """Runs one clip through the model: returns (T x C strong grid, length-C weak vector)."""
    strong, weak = model.forward_batch(features.values[None, :, :], mode)
    return strong[0], weak[0]


def collapse_time(strong_activations: np.ndarray) -> np.ndarray:
    """Mean over the time axis (second to last); the weak head's aggregation."""
    strong_activations = np.asarray(strong_activations)
    if strong_activations.shape[-2] < 1:
        raise ShapeError("Cannot collapse an empty time axis.")
    return strong_activations.mean(axis=-2)


def count_parameters(model) -> int:
    """Number of trainable scalars; batch-norm running statistics are not counted."""
    return sum(tensor.size for tensor in model.parameters().values())
