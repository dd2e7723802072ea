"""
File formats for audio and feature matrices.

WAV files go through soundfile; feature and saliency matrices use the WSEDF1
binary layout: magic "WSEDF1", u32 rows, u32 columns, then rows * columns
little-endian float32 values in row-major order.
"""
import logging
from pathlib import Path

import numpy as np
import soundfile as sf

from exceptions import DataFormatError
from .audio_features import AudioClip

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"WSEDF1"
SUPPORTED_WAV_SUBTYPES = ('PCM_16', 'FLOAT')


def read_wav(path: str | Path) -> AudioClip:
    """
    Reads a mono 16-bit PCM or 32-bit float WAV file.

    Raises:
        DataFormatError: if the file cannot be read, has an unsupported
            sample format, or has more than one channel.
    """
    path = Path(path)
    try:
        info = sf.info(str(path))
        if info.subtype not in SUPPORTED_WAV_SUBTYPES:
            raise DataFormatError(
                f"Unsupported WAV sample format '{info.subtype}' in {path}; "
                f"expected one of {', '.join(SUPPORTED_WAV_SUBTYPES)}.")
        if info.channels != 1:
            raise DataFormatError(
                f"{path} has {info.channels} channels; only mono audio is accepted.",
                code='NOT_MONO')
        samples, sample_rate = sf.read(str(path), dtype='float64', always_2d=False)
    except (RuntimeError, OSError) as e:
        raise DataFormatError(f"Failed to read WAV file {path}: {e}") from e
    logger.debug("Read %s: %d samples at %d Hz.", path, len(samples), sample_rate)
    return AudioClip(samples=samples, sample_rate=sample_rate)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Writes a clip as 16-bit PCM mono WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        sf.write(str(path), np.clip(clip.samples, -1.0, 1.0), clip.sample_rate, subtype='PCM_16')
    except (RuntimeError, OSError) as e:
        raise DataFormatError(f"Failed to write WAV file {path}: {e}") from e


def write_feature_matrix(path: str | Path, matrix: np.ndarray) -> None:
    """Writes a 2-D matrix in the WSEDF1 layout."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise DataFormatError(f"Only 2-D matrices can be written, got shape {matrix.shape}.")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = FEATURE_MAGIC + np.array(matrix.shape, dtype='<u4').tobytes()
    path.write_bytes(header + np.ascontiguousarray(matrix, dtype='<f4').tobytes())


def read_feature_matrix(path: str | Path) -> np.ndarray:
    """Reads a WSEDF1 matrix file into a float32 array."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataFormatError(f"Failed to read matrix file {path}: {e}") from e
    if not data.startswith(FEATURE_MAGIC):
        raise DataFormatError(f"{path} is not a WSEDF1 matrix file.", code='BAD_MAGIC')
    offset = len(FEATURE_MAGIC)
    if len(data) < offset + 8:
        raise DataFormatError(f"{path} is truncated: missing matrix dimensions.")
    rows, cols = np.frombuffer(data, dtype='<u4', count=2, offset=offset)
    payload = data[offset + 8:]
    expected = int(rows) * int(cols) * 4
    if len(payload) != expected:
        raise DataFormatError(
            f"{path} holds {len(payload)} payload bytes, expected {expected} for a "
            f"{rows}x{cols} matrix.")
    return np.frombuffer(payload, dtype='<f4').reshape(int(rows), int(cols)).copy()
