"""
WSEDM1 model checkpoints.

Layout (all integers little-endian u32):
    b"WSEDM1", format version,
    config text length, config text (UTF-8 `key=value` lines, keys sorted),
    tensor count, then per tensor: name length, name, rank, dims..., float32 data.

Tensors are the trainable parameters in layer order, followed by the
non-trainable buffers (`buffer.` prefix) and the feature normalizer
statistics (`normalizer.` prefix).
"""
import dataclasses
import io
import logging
import struct
from pathlib import Path

import numpy as np

from exceptions import DataFormatError
from .audio_features import FeatureConfig, FeatureNormalizer
from .crnn_model import ModelConfig, SedModel, build

logger = logging.getLogger(__name__)

MAGIC = b"WSEDM1"
FORMAT_VERSION = 1
BUFFER_PREFIX = 'buffer.'
NORMALIZER_PREFIX = 'normalizer.'


@dataclasses.dataclass
class Checkpoint:
    model: SedModel
    normalizer: FeatureNormalizer
    vocabulary: list[str]
    feature_config: FeatureConfig


def _format_value(value) -> str:
    if isinstance(value, (list, tuple)):
        return ','.join(_format_value(v) for v in value)
    if value is None:
        return ''
    return repr(value) if isinstance(value, float) else str(value)


def config_text(model_config: ModelConfig, feature_config: FeatureConfig, vocabulary: list[str]) -> str:
    """Canonical `key=value` text: one key per line, sorted, lists comma-joined."""
    items = {f"model.{k}": v for k, v in dataclasses.asdict(model_config).items()}
    items.update({f"feature.{k}": v for k, v in dataclasses.asdict(feature_config).items()})
    items['vocabulary'] = list(vocabulary)
    return ''.join(f"{key}={_format_value(items[key])}\n" for key in sorted(items))


def _parse_field(dataclass_type, name: str, text: str):
    """Parses a value back into the type of the field's default."""
    if name == 'fft_size':
        return int(text) if text else None
    sample = getattr(dataclass_type(), name)
    if isinstance(sample, list):
        return [int(v) for v in text.split(',') if v]
    if isinstance(sample, float):
        return float(text)
    if isinstance(sample, int):
        return int(text)
    return text


def parse_config_text(text: str) -> tuple[ModelConfig, FeatureConfig, list[str]]:
    model_kwargs, feature_kwargs, vocabulary = {}, {}, []
    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    feature_fields = {f.name for f in dataclasses.fields(FeatureConfig)}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition('=')
        if not sep:
            raise DataFormatError(f"Malformed checkpoint config line '{line}'.")
        section, _, name = key.partition('.')
        try:
            if key == 'vocabulary':
                vocabulary = [v for v in value.split(',') if v]
            elif section == 'model' and name in model_fields:
                model_kwargs[name] = _parse_field(ModelConfig, name, value)
            elif section == 'feature' and name in feature_fields:
                feature_kwargs[name] = _parse_field(FeatureConfig, name, value)
            else:
                raise DataFormatError(f"Unknown checkpoint config key '{key}'.")
        except ValueError as e:
            raise DataFormatError(f"Bad value for checkpoint config key '{key}': {e}") from e
    return ModelConfig(**model_kwargs), FeatureConfig(**feature_kwargs), vocabulary


def _round_to_stored_precision(model: SedModel, normalizer: FeatureNormalizer) -> None:
    """Rounds parameters, buffers and normalizer statistics to float32 in their own dtype."""
    for tensor in model.parameters().values():
        tensor.assign(tensor.values.astype('<f4'))
    model.load_buffers({n: a.astype('<f4') for n, a in model.buffers().items()})
    if normalizer.is_fitted:
        normalizer.mean = normalizer.mean.astype('<f4').astype(np.float64)
        normalizer.std = normalizer.std.astype('<f4').astype(np.float64)


def save_checkpoint(path: str | Path, model: SedModel, normalizer: FeatureNormalizer,
                    vocabulary: list[str], feature_config: FeatureConfig) -> None:
    """
    Writes a WSEDM1 file.

    Tensor data is stored as float32, so the model and normalizer are first
    rounded to float32 in place; the in-memory model then computes exactly
    what a reloaded one does.
    """
    _round_to_stored_precision(model, normalizer)
    tensors: list[tuple[str, np.ndarray]] = [(n, t.values) for n, t in model.parameters().items()]
    tensors += [(BUFFER_PREFIX + n, a) for n, a in model.buffers().items()]
    if normalizer.is_fitted:
        tensors += [(NORMALIZER_PREFIX + 'mean', normalizer.mean),
                    (NORMALIZER_PREFIX + 'std', normalizer.std)]

    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack('<I', FORMAT_VERSION))
    text = config_text(model.config, feature_config, vocabulary).encode('utf-8')
    out.write(struct.pack('<I', len(text)))
    out.write(text)
    out.write(struct.pack('<I', len(tensors)))
    for name, values in tensors:
        encoded = name.encode('utf-8')
        out.write(struct.pack('<I', len(encoded)))
        out.write(encoded)
        out.write(struct.pack('<I', values.ndim))
        out.write(struct.pack(f'<{values.ndim}I', *values.shape))
        out.write(np.ascontiguousarray(values, dtype='<f4').tobytes())

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(out.getvalue())
    except OSError as e:
        raise DataFormatError(f"Cannot write checkpoint {path}: {e}") from e
    logger.info("Saved checkpoint with %d tensors to %s.", len(tensors), path)


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data, self.offset, self.path = data, 0, path

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise DataFormatError(f"Checkpoint {self.path} is truncated.")
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def u32(self, count: int = 1) -> tuple[int, ...]:
        return struct.unpack(f'<{count}I', self.take(4 * count))


def load_checkpoint(path: str | Path) -> Checkpoint:
    """
    Rebuilds the model, normalizer, vocabulary and feature config.

    Raises:
        DataFormatError: BAD_MAGIC for foreign files, CHECKPOINT_VERSION for
            another format version, DATA_FORMAT for truncated or inconsistent
            content.
    """
    path = Path(path)
    try:
        reader = _Reader(path.read_bytes(), path)
    except OSError as e:
        raise DataFormatError(f"Cannot read checkpoint {path}: {e}") from e
    if reader.take(len(MAGIC)) != MAGIC:
        raise DataFormatError(f"{path} is not a WSEDM1 checkpoint.", code='BAD_MAGIC')
    (version,) = reader.u32()
    if version != FORMAT_VERSION:
        raise DataFormatError(
            f"{path} has checkpoint format version {version}; this build reads version "
            f"{FORMAT_VERSION}.", code='CHECKPOINT_VERSION')
    (text_len,) = reader.u32()
    model_config, feature_config, vocabulary = parse_config_text(reader.take(text_len).decode('utf-8'))

    tensors: dict[str, np.ndarray] = {}
    (count,) = reader.u32()
    for _ in range(count):
        (name_len,) = reader.u32()
        name = reader.take(name_len).decode('utf-8')
        (rank,) = reader.u32()
        shape = reader.u32(rank) if rank else ()
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(reader.take(4 * size), dtype='<f4').reshape(shape)
    if reader.offset != len(reader.data):
        raise DataFormatError(f"Checkpoint {path} has trailing bytes.")

    model = build(model_config)
    params = model.parameters()
    missing = set(params) - set(tensors)
    if missing:
        raise DataFormatError(f"Checkpoint {path} lacks parameters: {sorted(missing)}.")
    for name, tensor in params.items():
        try:
            tensor.assign(tensors[name])
        except ValueError as e:
            raise DataFormatError(f"Checkpoint tensor '{name}': {e}") from e
    model.load_buffers({n[len(BUFFER_PREFIX):]: a for n, a in tensors.items()
                        if n.startswith(BUFFER_PREFIX)})

    normalizer = FeatureNormalizer()
    if NORMALIZER_PREFIX + 'mean' in tensors:
        normalizer = FeatureNormalizer(tensors[NORMALIZER_PREFIX + 'mean'].astype(np.float64),
                                       tensors[NORMALIZER_PREFIX + 'std'].astype(np.float64))
    logger.info("Loaded %s checkpoint from %s (%d classes).", model_config.architecture, path,
                model_config.num_classes)
    return Checkpoint(model, normalizer, vocabulary, feature_config)
