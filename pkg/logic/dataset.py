"""
Training and evaluation data: a seeded synthetic polyphonic clip generator
with known event timings, and loading of WAV clips listed in a manifest.

Manifest files are tab-separated `key<TAB>value` lines:

    split       train
    vocabulary  beep,chirp,hiss,hum
    weak        weak.tsv
    strong      strong.tsv          (optional)
    clip        audio/clip_0000.wav (one line per clip)

Relative paths resolve against the manifest's directory. Annotation files
refer to clips by file name.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from exceptions import DataFormatError, InvalidArgumentError
from .annotations import (LabeledEvent, label_index, read_strong, read_weak, to_events,
                          write_strong, write_weak)
from .audio_features import AudioClip, FeatureConfig, FeatureMatrix, extract_many
from .event_decoding import EventList
from .feature_io import read_wav, write_wav
from .parallel import parallel_map

logger = logging.getLogger(__name__)

ARCHETYPES = ('tone', 'chirp', 'noise')
DEFAULT_SAMPLE_RATE = 44100
DEFAULT_CLIP_S = 10.0
FADE_S = 0.010
BACKGROUND_DB = -40.0
PEAK_LIMIT = 0.99
MANIFEST_KEYS = ('split', 'vocabulary', 'weak', 'strong', 'clip')


@dataclass(frozen=True)
class SynthClass:
    name: str
    archetype: str
    center_hz: float
    bandwidth_hz: float = 0.0
    duration_range: tuple[float, float] = (1.0, 4.0)
    amplitude_range: tuple[float, float] = (0.3, 0.8)

    def validate(self, sample_rate: int, clip_s: float) -> "SynthClass":
        if self.archetype not in ARCHETYPES:
            raise InvalidArgumentError(
                f"Class '{self.name}': unknown archetype '{self.archetype}'.")
        if not 0 < self.center_hz + self.bandwidth_hz / 2 < sample_rate / 2:
            raise InvalidArgumentError(
                f"Class '{self.name}': band around {self.center_hz} Hz exceeds the Nyquist "
                f"frequency {sample_rate / 2} Hz.")
        low, high = self.duration_range
        if not 0 < low <= high <= clip_s:
            raise InvalidArgumentError(
                f"Class '{self.name}': duration range {self.duration_range} does not fit a "
                f"{clip_s} s clip.")
        return self


def default_classes() -> list[SynthClass]:
    """Four spectrally separated classes."""
    return [
        SynthClass('beep', 'tone', 1000.0),
        SynthClass('chirp', 'chirp', 4000.0, 2000.0),
        SynthClass('hiss', 'noise', 10000.0, 4000.0),
        SynthClass('hum', 'tone', 250.0),
    ]


def hard_classes() -> list[SynthClass]:
    """Four classes crowded into 800-2000 Hz."""
    return [
        SynthClass('beep', 'tone', 1000.0),
        SynthClass('chirp', 'chirp', 1500.0, 600.0),
        SynthClass('hiss', 'noise', 1400.0, 800.0),
        SynthClass('hum', 'tone', 850.0),
    ]


PRESETS = {'default': default_classes, 'hard': hard_classes}


def select_classes(count: int, preset: str = 'default') -> list[SynthClass]:
    if preset not in PRESETS:
        raise InvalidArgumentError(f"Unknown class preset '{preset}'; expected one of {sorted(PRESETS)}.")
    classes = PRESETS[preset]()
    if not 1 <= count <= len(classes):
        raise InvalidArgumentError(
            f"The '{preset}' preset has {len(classes)} classes; cannot select {count}.")
    return classes[:count]


def _fade(length: int, sample_rate: int) -> np.ndarray:
    envelope = np.ones(length)
    ramp = min(int(round(FADE_S * sample_rate)), length // 2)
    if ramp > 0:
        rise = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
        envelope[:ramp] = rise
        envelope[length - ramp:] = rise[::-1]
    return envelope


def render_event(cls: SynthClass, onset: float, duration: float, rng: np.random.Generator,
                 sample_rate: int = DEFAULT_SAMPLE_RATE, clip_s: float = DEFAULT_CLIP_S,
                 amplitude: float | None = None) -> np.ndarray:
    """
    Renders one event of `cls` lasting `duration` seconds, with 10 ms
    raised-cosine fades at both ends. The amplitude is drawn from the class
    range unless given.
    """
    if onset < 0 or duration <= 0 or onset + duration > clip_s + 1e-9:
        raise InvalidArgumentError(
            f"Event at {onset} s lasting {duration} s does not fit a {clip_s} s clip.")
    if amplitude is None:
        amplitude = rng.uniform(*cls.amplitude_range)
    length = int(round(duration * sample_rate))
    t = np.arange(length) / sample_rate

    if cls.archetype == 'tone':
        wave = np.sin(2 * np.pi * cls.center_hz * t + rng.uniform(0, 2 * np.pi))
    elif cls.archetype == 'chirp':
        start = cls.center_hz - cls.bandwidth_hz / 2
        rate = cls.bandwidth_hz / duration
        wave = np.sin(2 * np.pi * (start * t + 0.5 * rate * t * t))
    else:
        spectrum = np.fft.rfft(rng.standard_normal(length))
        freqs = np.fft.rfftfreq(length, 1.0 / sample_rate)
        half = cls.bandwidth_hz / 2
        spectrum[(freqs < cls.center_hz - half) | (freqs > cls.center_hz + half)] = 0
        wave = np.fft.irfft(spectrum, n=length)
        peak = np.max(np.abs(wave))
        wave = wave / peak if peak > 0 else wave
    return amplitude * wave * _fade(length, sample_rate)


@dataclass
class LabeledClip:
    name: str
    clip: AudioClip
    weak: set[str]
    strong: list[LabeledEvent] | None = None


@dataclass
class ManifestEntry:
    path: Path
    weak: set[str]
    strong: list[LabeledEvent] | None = None

    @property
    def name(self) -> str:
        return self.path.name


@dataclass
class DatasetManifest:
    split: str
    vocabulary: list[str]
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None

    @property
    def has_strong(self) -> bool:
        return any(e.strong is not None for e in self.entries)


@dataclass
class Example:
    """A clip ready for the model: features plus labels as class indices."""
    name: str
    features: FeatureMatrix
    weak: set[int]
    strong: EventList | None
    duration_s: float


def _millis(seconds: float) -> float:
    """Rounds down to whole milliseconds so annotation files store times exactly."""
    return math.floor(seconds * 1000.0) / 1000.0


def _render_clip(index: int, seed_seq: np.random.SeedSequence, classes: list[SynthClass],
                 clip_s: float, polyphony_max: int, sample_rate: int) -> LabeledClip:
    rng = np.random.default_rng(seed_seq)
    num_samples = int(round(clip_s * sample_rate))
    mix = np.zeros(num_samples)
    count = int(rng.integers(1, polyphony_max + 1))
    chosen = rng.choice(len(classes), size=count, replace=count > len(classes))

    events, loudest = [], 0.0
    for class_idx in chosen:
        cls = classes[int(class_idx)]
        duration = _millis(rng.uniform(*cls.duration_range))
        onset = _millis(rng.uniform(0.0, clip_s - duration))
        amplitude = float(rng.uniform(*cls.amplitude_range))
        wave = render_event(cls, onset, duration, rng, sample_rate, clip_s, amplitude)
        start = int(round(onset * sample_rate))
        stop = min(start + len(wave), num_samples)
        mix[start:stop] += wave[:stop - start]
        events.append(LabeledEvent(cls.name, onset, round(onset + duration, 3)))
        loudest = max(loudest, amplitude)

    mix += 10 ** (BACKGROUND_DB / 20) * loudest * rng.standard_normal(num_samples)
    peak = np.max(np.abs(mix))
    if peak > PEAK_LIMIT:
        mix *= PEAK_LIMIT / peak
    events.sort(key=lambda e: (e.onset, e.label))
    return LabeledClip(name=f"clip_{index:04d}.wav", clip=AudioClip(mix, sample_rate),
                       weak={e.label for e in events}, strong=events)


def generate_dataset(num_clips: int, classes: list[SynthClass], clip_s: float = DEFAULT_CLIP_S,
                     polyphony_max: int = 2, seed: int = 0, sample_rate: int = DEFAULT_SAMPLE_RATE,
                     split: str = 'train', threads: int = 1
                     ) -> tuple[list[LabeledClip], DatasetManifest]:
    """
    Generates `num_clips` clips with 1..polyphony_max events each over a
    -40 dB noise floor. Every clip draws from its own child seed, so the
    result depends only on the arguments, not on `threads`.
    """
    if num_clips < 1:
        raise InvalidArgumentError(f"num_clips must be at least 1, got {num_clips}.")
    if not classes:
        raise InvalidArgumentError("At least one synthetic class is required.")
    if polyphony_max < 1:
        raise InvalidArgumentError(f"polyphony_max must be at least 1, got {polyphony_max}.")
    for cls in classes:
        cls.validate(sample_rate, clip_s)

    seeds = np.random.SeedSequence(seed).spawn(num_clips)
    clips = parallel_map(
        lambda i: _render_clip(i, seeds[i], classes, clip_s, polyphony_max, sample_rate),
        range(num_clips), threads)
    manifest = DatasetManifest(
        split=split,
        vocabulary=[c.name for c in classes],
        entries=[ManifestEntry(Path('audio') / c.name, c.weak, c.strong) for c in clips])
    logger.info("Generated %d %s clips with %d events over %d classes (seed %d).",
                num_clips, split, sum(len(c.strong or []) for c in clips), len(classes), seed)
    return clips, manifest


def write_dataset(clips: list[LabeledClip], manifest: DatasetManifest, out_dir: str | Path) -> Path:
    """
    Writes 16-bit WAVs under out_dir/audio plus weak.tsv, strong.tsv and
    manifest.tsv. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    try:
        (out_dir / 'audio').mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataFormatError(f"Cannot create output directory {out_dir}: {e}") from e
    for labeled, entry in zip(clips, manifest.entries):
        write_wav(out_dir / entry.path, labeled.clip)

    write_weak(out_dir / 'weak.tsv', {c.name: c.weak for c in clips})
    has_strong = any(c.strong is not None for c in clips)
    if has_strong:
        write_strong(out_dir / 'strong.tsv', {c.name: c.strong or [] for c in clips})

    lines = [f"split\t{manifest.split}", f"vocabulary\t{','.join(manifest.vocabulary)}",
             "weak\tweak.tsv"]
    if has_strong:
        lines.append("strong\tstrong.tsv")
    lines += [f"clip\t{entry.path.as_posix()}" for entry in manifest.entries]
    manifest_path = out_dir / 'manifest.tsv'
    manifest_path.write_text(''.join(line + '\n' for line in lines), encoding='utf-8')
    logger.info("Wrote %d clips and annotations to %s.", len(clips), out_dir)
    return manifest_path


def load_manifest(path: str | Path) -> DatasetManifest:
    """
    Parses a manifest and its annotation files.

    Raises:
        DataFormatError: on malformed lines (with line number), unknown keys or
            labels, duplicate clip paths, or clips without weak labels.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise DataFormatError(f"Cannot read manifest {path}: {e}") from e

    values: dict[str, str] = {}
    clip_paths: list[str] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith('#'):
            continue
        key, sep, value = raw.partition('\t')
        key, value = key.strip(), value.strip()
        if not sep or not value:
            raise DataFormatError(f"{path}, line {line_no}: expected 'key<TAB>value'.",
                                  code='PARSE_ERROR')
        if key not in MANIFEST_KEYS:
            raise DataFormatError(f"{path}, line {line_no}: unknown manifest key '{key}'.",
                                  code='PARSE_ERROR')
        if key == 'clip':
            if value in clip_paths:
                raise DataFormatError(f"{path}, line {line_no}: duplicate clip path '{value}'.",
                                      code='PARSE_ERROR')
            clip_paths.append(value)
        else:
            values[key] = value

    for required in ('vocabulary', 'weak'):
        if required not in values:
            raise DataFormatError(f"{path}: missing '{required}' entry.", code='PARSE_ERROR')
    root = path.parent
    vocabulary = [v.strip() for v in values['vocabulary'].split(',') if v.strip()]
    weak_table = read_weak(root / values['weak'])
    strong_table = read_strong(root / values['strong']) if 'strong' in values else None

    entries = []
    for clip_path in clip_paths:
        name = Path(clip_path).name
        if name not in weak_table:
            raise DataFormatError(f"{path}: clip '{name}' has no weak label entry.")
        weak = weak_table[name]
        for label in weak:
            label_index(vocabulary, label)
        strong = None
        if strong_table is not None:
            strong = strong_table.get(name, [])
            to_events(strong, vocabulary)
            if {e.label for e in strong} != weak:
                logger.warning("Clip %s: weak labels %s differ from strong classes %s.",
                               name, sorted(weak), sorted({e.label for e in strong}))
        entries.append(ManifestEntry(Path(clip_path), weak, strong))

    manifest = DatasetManifest(split=values.get('split', path.stem), vocabulary=vocabulary,
                               entries=entries, root=root)
    logger.info("Loaded manifest %s: split '%s', %d clips, %d classes%s.", path, manifest.split,
                len(entries), len(vocabulary), ", strong labels" if manifest.has_strong else "")
    return manifest


def load_clip(entry: ManifestEntry, root: Path | None = None) -> LabeledClip:
    """Loads the audio of one manifest entry."""
    path = entry.path if root is None or entry.path.is_absolute() else root / entry.path
    return LabeledClip(name=entry.name, clip=read_wav(path), weak=set(entry.weak),
                       strong=None if entry.strong is None else list(entry.strong))


def build_examples(clips: list[LabeledClip], vocabulary: list[str],
                   feature_cfg: FeatureConfig | None = None, threads: int = 1) -> list[Example]:
    """Extracts features and maps labels to class indices."""
    features = extract_many([c.clip for c in clips], feature_cfg, threads)
    examples = []
    for labeled, matrix in zip(clips, features):
        matrix.source = labeled.name
        examples.append(Example(
            name=labeled.name,
            features=matrix,
            weak={label_index(vocabulary, label) for label in labeled.weak},
            strong=None if labeled.strong is None else to_events(labeled.strong, vocabulary),
            duration_s=labeled.clip.duration_s,
        ))
    return examples


def load_split(manifest_path: str | Path, feature_cfg: FeatureConfig | None = None,
               threads: int = 1) -> tuple[DatasetManifest, list[Example]]:
    """Loads every clip of a manifest and turns it into model-ready examples."""
    manifest = load_manifest(manifest_path)
    clips = parallel_map(lambda entry: load_clip(entry, manifest.root), manifest.entries, threads)
    return manifest, build_examples(clips, manifest.vocabulary, feature_cfg, threads)
