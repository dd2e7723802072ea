"""
Tab-separated annotation files.

Strong:  filename<TAB>onset<TAB>offset<TAB>label   (one event per line)
Weak:    filename<TAB>label1,label2,...            (one clip per line)

Blank lines and lines starting with '#' are ignored.
"""
import logging
from pathlib import Path
from typing import NamedTuple

from exceptions import DataFormatError
from .event_decoding import Event, EventList
from .sed_metrics import SplitReport, events_to_segments, score_split

logger = logging.getLogger(__name__)


class LabeledEvent(NamedTuple):
    label: str
    onset: float
    offset: float


def _content_lines(path: Path):
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise DataFormatError(f"Cannot read annotation file {path}: {e}") from e
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip('\r\n')
        if not line.strip() or line.lstrip().startswith('#'):
            continue
        yield line_no, line


def _parse_error(path: Path, line_no: int, reason: str) -> DataFormatError:
    return DataFormatError(f"{path}, line {line_no}: {reason}", code='PARSE_ERROR')


def read_strong(path: str | Path) -> dict[str, list[LabeledEvent]]:
    """Reads a strong annotation file into filename -> events (file order kept)."""
    path = Path(path)
    events: dict[str, list[LabeledEvent]] = {}
    for line_no, line in _content_lines(path):
        fields = line.split('\t')
        if len(fields) != 4:
            raise _parse_error(path, line_no, f"expected 4 tab-separated fields, got {len(fields)}")
        filename, onset_text, offset_text, label = (f.strip() for f in fields)
        try:
            onset, offset = float(onset_text), float(offset_text)
        except ValueError as e:
            raise _parse_error(path, line_no, f"onset/offset are not numbers ({e})") from e
        if not 0 <= onset < offset:
            raise _parse_error(path, line_no,
                               f"onset {onset} must be nonnegative and before offset {offset}")
        if not label:
            raise _parse_error(path, line_no, "empty label")
        events.setdefault(filename, []).append(LabeledEvent(label, onset, offset))
    logger.debug("Read %d strong events for %d files from %s.",
                 sum(map(len, events.values())), len(events), path)
    return events


def read_weak(path: str | Path) -> dict[str, set[str]]:
    """Reads a weak annotation file into filename -> label set."""
    path = Path(path)
    labels: dict[str, set[str]] = {}
    for line_no, line in _content_lines(path):
        fields = line.split('\t')
        if len(fields) > 2:
            raise _parse_error(path, line_no, f"expected at most 2 tab-separated fields, got {len(fields)}")
        filename = fields[0].strip()
        if not filename:
            raise _parse_error(path, line_no, "empty filename")
        if filename in labels:
            raise _parse_error(path, line_no, f"duplicate entry for '{filename}'")
        names = fields[1].split(',') if len(fields) == 2 else []
        labels[filename] = {n.strip() for n in names if n.strip()}
    logger.debug("Read weak labels for %d files from %s.", len(labels), path)
    return labels


def write_strong(path: str | Path, events: dict[str, list[LabeledEvent]]) -> None:
    lines = [f"{filename}\t{e.onset:.3f}\t{e.offset:.3f}\t{e.label}"
             for filename in events
             for e in sorted(events[filename], key=lambda e: (e.onset, e.label))]
    _write_lines(Path(path), lines)


def write_weak(path: str | Path, labels: dict[str, set[str]]) -> None:
    _write_lines(Path(path), [f"{filename}\t{','.join(sorted(labels[filename]))}"
                              for filename in labels])


def _write_lines(path: Path, lines: list[str]) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(''.join(line + '\n' for line in lines), encoding='utf-8')
    except OSError as e:
        raise DataFormatError(f"Cannot write annotation file {path}: {e}") from e


def label_index(vocabulary: list[str], label: str) -> int:
    try:
        return vocabulary.index(label)
    except ValueError:
        raise DataFormatError(f"Label '{label}' is not in the vocabulary {vocabulary}.",
                              code='UNKNOWN_LABEL') from None


def to_events(labeled: list[LabeledEvent], vocabulary: list[str]) -> EventList:
    return [Event(label_index(vocabulary, e.label), e.onset, e.offset) for e in labeled]


def evaluate_annotations(reference_strong: str | Path, estimate_strong: str | Path,
                         reference_weak: str | Path | None = None,
                         estimate_weak: str | Path | None = None,
                         segment_s: float = 1.0, duration_s: float = 10.0) -> SplitReport:
    """
    Scores estimate files against reference files. Every file named in a
    reference is a clip; a clip missing from the estimates counts as an empty
    prediction. Weak labels come from the weak files when given, otherwise
    from the classes present in the strong events.
    """
    ref_events = read_strong(reference_strong)
    est_events = read_strong(estimate_strong)
    ref_labels = read_weak(reference_weak) if reference_weak else None
    est_labels = read_weak(estimate_weak) if estimate_weak else None

    clips = sorted(set(ref_events) | set(ref_labels or {}))
    vocabulary = sorted({e.label for evs in (*ref_events.values(), *est_events.values()) for e in evs}
                        | {lab for table in (ref_labels, est_labels) if table for labs in table.values()
                           for lab in labs})

    def weak_of(table, events, clip):
        if table is not None:
            return table.get(clip, set())
        return {e.label for e in events.get(clip, [])}

    ref_weak, pred_weak, strong_pairs = [], [], []
    for clip in clips:
        ref_weak.append(weak_of(ref_labels, ref_events, clip))
        pred_weak.append(weak_of(est_labels, est_events, clip))
        ref_activity = events_to_segments(to_events(ref_events.get(clip, []), vocabulary),
                                          segment_s, duration_s, len(vocabulary))
        pred_activity = events_to_segments(to_events(est_events.get(clip, []), vocabulary),
                                           segment_s, duration_s, len(vocabulary))
        strong_pairs.append((ref_activity, pred_activity))

    unknown = set(est_events) - set(clips)
    if unknown:
        logger.warning("%d estimated files have no reference and are ignored.", len(unknown))
    return score_split(pred_weak, ref_weak, strong_pairs if ref_events else [])
