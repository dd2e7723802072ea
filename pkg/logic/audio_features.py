"""
Log mel-band energy (mbe) feature extraction.

Audio is cut into Hamming-windowed frames with a fixed overlap, each frame is
turned into a power spectrum and projected onto a bank of triangular mel
filters; the natural log of the band energies (floored) is the network input.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from exceptions import DataFormatError, InvalidArgumentError, ConfigError
from .parallel import parallel_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AudioClip:
    """Mono audio: a 1-D sample array and its sample rate in Hz."""
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataFormatError(
                f"Audio must be mono, got array of shape {samples.shape}.", code='NOT_MONO')
        if int(self.sample_rate) <= 0:
            raise InvalidArgumentError(f"Sample rate must be positive, got {self.sample_rate}.")
        if not np.all(np.isfinite(samples)):
            raise DataFormatError("Audio samples contain NaN or Inf values.")
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'sample_rate', int(self.sample_rate))

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    window_ms: float = 40.0
    overlap_fraction: float = 0.5
    num_mel_bands: int = 40
    fmin: float = 0.0
    fmax: float = 22050.0
    fft_size: int | None = None
    log_floor: float = 1e-10

    def validate(self) -> "FeatureConfig":
        if self.window_ms <= 0:
            raise ConfigError(f"window_ms must be positive, got {self.window_ms}.")
        if not 0.0 < self.overlap_fraction < 1.0:
            raise ConfigError(
                f"overlap_fraction must be in (0, 1), got {self.overlap_fraction}.")
        if self.num_mel_bands < 1:
            raise ConfigError(f"num_mel_bands must be at least 1, got {self.num_mel_bands}.")
        if not self.fmin < self.fmax:
            raise ConfigError(f"fmin ({self.fmin}) must be below fmax ({self.fmax}).")
        if self.log_floor <= 0:
            raise ConfigError(f"log_floor must be positive, got {self.log_floor}.")
        if self.fft_size is not None and self.fft_size < 1:
            raise ConfigError(f"fft_size must be positive, got {self.fft_size}.")
        return self

    def window_length(self, sample_rate: int) -> int:
        """Window length in samples for the given sample rate."""
        return max(1, int(round(self.window_ms / 1000.0 * sample_rate)))

    def hop_length(self, sample_rate: int) -> int:
        return max(1, int(round(self.window_length(sample_rate) * (1.0 - self.overlap_fraction))))

    def resolved_fft_size(self, sample_rate: int) -> int:
        """The configured FFT size, or the next power of two >= the window length."""
        window_len = self.window_length(sample_rate)
        if self.fft_size is not None:
            if self.fft_size < window_len:
                raise ConfigError(
                    f"fft_size {self.fft_size} is shorter than the window ({window_len} samples).")
            return self.fft_size
        return 1 << (window_len - 1).bit_length()


@dataclass
class FeatureMatrix:
    """T x F log mel-band energies plus the time step between frames."""
    values: np.ndarray
    frame_hop_s: float
    source: str = field(default="", compare=False)

    @property
    def num_frames(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_bands(self) -> int:
        return int(self.values.shape[1])


def hamming_window(n: int) -> np.ndarray:
    """Symmetric Hamming window of n coefficients."""
    if n < 1:
        raise InvalidArgumentError(f"Window length must be at least 1, got {n}.")
    if n == 1:
        return np.ones(1)
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def frame_signal(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    """
    Cuts the clip into T = ceil(len / hop) Hamming-windowed frames.

    The signal is zero-padded at the tail so the last frame is full length.

    Returns:
        A T x window_length array of windowed frames.
    """
    num_samples = len(clip.samples)
    if num_samples == 0:
        raise InvalidArgumentError("Cannot frame an empty clip.")
    window_len = cfg.window_length(clip.sample_rate)
    hop = cfg.hop_length(clip.sample_rate)
    num_frames = math.ceil(num_samples / hop)

    padded_len = (num_frames - 1) * hop + window_len
    padded = np.zeros(padded_len)
    padded[:num_samples] = clip.samples

    starts = np.arange(num_frames) * hop
    frames = padded[starts[:, None] + np.arange(window_len)[None, :]]
    return frames * hamming_window(window_len)


def power_spectrum(frame: np.ndarray, fft_size: int) -> np.ndarray:
    """
    Magnitude-squared DFT of a frame (or of each row of a frame matrix),
    zero-padded to fft_size. Returns fft_size // 2 + 1 bins per frame.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] > fft_size:
        raise InvalidArgumentError(
            f"Frame length {frame.shape[-1]} exceeds fft_size {fft_size}.")
    spectrum = np.fft.rfft(frame, n=fft_size, axis=-1)
    return spectrum.real ** 2 + spectrum.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: FeatureConfig) -> np.ndarray:
    """num_mel_bands + 2 edge frequencies in Hz, equally spaced on the mel scale."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.num_mel_bands + 2)
    edges = mel_to_hz(mels)
    # Pin the ends exactly so the first edge maps to the configured fmin bin.
    edges[0], edges[-1] = cfg.fmin, cfg.fmax
    return edges


def mel_filterbank(cfg: FeatureConfig, sample_rate: int) -> np.ndarray:
    """
    Builds num_mel_bands triangular filters over the rfft bins.

    Each row is a triangle between consecutive mel edges, rescaled so its
    largest entry is exactly 1.0.

    Raises:
        InvalidArgumentError: if fmax is above the Nyquist frequency.
    """
    cfg.validate()
    nyquist = sample_rate / 2.0
    if cfg.fmax > nyquist:
        raise InvalidArgumentError(
            f"fmax {cfg.fmax} Hz is above the Nyquist frequency {nyquist} Hz.")
    fft_size = cfg.resolved_fft_size(sample_rate)
    bin_freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    edges = mel_band_edges(cfg)

    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs[None, :] - left) / (center - left)
    falling = (right - bin_freqs[None, :]) / (right - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))

    peaks = bank.max(axis=1)
    empty = peaks <= 0
    if np.any(empty):
        logger.warning("%d mel bands fall between FFT bins and stay empty; "
                       "consider a larger fft_size.", int(empty.sum()))
    bank[~empty] /= peaks[~empty, None]
    return bank


def extract_mbe(clip: AudioClip, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    """
    Extracts the T x num_mel_bands log mel-band energy matrix of a clip.
    """
    cfg = (cfg or FeatureConfig()).validate()
    frames = frame_signal(clip, cfg)
    fft_size = cfg.resolved_fft_size(clip.sample_rate)
    bank = mel_filterbank(cfg, clip.sample_rate)

    energies = power_spectrum(frames, fft_size) @ bank.T
    values = np.log(np.maximum(energies, cfg.log_floor))
    hop_s = cfg.hop_length(clip.sample_rate) / clip.sample_rate
    logger.debug("Extracted mbe features of shape %s (hop %.4f s).", values.shape, hop_s)
    return FeatureMatrix(values=values, frame_hop_s=hop_s)


class FeatureNormalizer:
    """
    Per-band standardisation fitted on training features.

    The statistics are stored in model checkpoints so prediction applies the
    same transform that training saw.
    """
    def __init__(self, mean: np.ndarray | None = None, std: np.ndarray | None = None):
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = None if std is None else np.asarray(std, dtype=np.float64)

    @property
    def is_fitted(self) -> bool:
        return self.mean is not None and self.std is not None

    def fit(self, matrices: list[FeatureMatrix]) -> "FeatureNormalizer":
        if not matrices:
            raise InvalidArgumentError("Cannot fit a normalizer on an empty feature list.")
        stacked = np.concatenate([m.values for m in matrices], axis=0)
        self.mean = stacked.mean(axis=0)
        # Constant bands (e.g. all at the log floor) keep unit scale.
        std = stacked.std(axis=0)
        self.std = np.where(std > 1e-8, std, 1.0)
        return self

    def apply(self, matrix: FeatureMatrix) -> FeatureMatrix:
        if not self.is_fitted:
            return matrix
        if matrix.num_bands != len(self.mean):
            raise InvalidArgumentError(
                f"Feature has {matrix.num_bands} bands, normalizer expects {len(self.mean)}.")
        values = (matrix.values - self.mean) / self.std
        return FeatureMatrix(values=values, frame_hop_s=matrix.frame_hop_s, source=matrix.source)


def extract_many(clips: list[AudioClip], cfg: FeatureConfig | None = None,
                 threads: int = 1) -> list[FeatureMatrix]:
    """Extracts features for many clips, in order, optionally on worker threads."""
    cfg = (cfg or FeatureConfig()).validate()
    return parallel_map(lambda clip: extract_mbe(clip, cfg), clips, threads)
