"""
Clip-level (weak) and segment-based (strong) detection metrics.

Weak metrics count true/false positives and false negatives over every
(clip, class) pair. Strong metrics rasterise activity onto fixed-length
segments and score the per-segment counts; all counts are summed over
segments, classes and clips before any ratio is taken.
"""
import copy
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from exceptions import InvalidArgumentError, MetricError, ShapeError
from .event_decoding import EventList, binarize, weak_from_strong
from .parallel import parallel_map
from .tensor import INFER

if TYPE_CHECKING:
    from .dataset import Example

logger = logging.getLogger(__name__)

# Frame starts are compared against segment boundaries with this slack so
# that e.g. 50 * 0.02 s lands in segment 1, not segment 0.
BOUNDARY_SLACK = 1e-9


def f_score(precision: float, recall: float) -> float:
    """Harmonic mean of two percentages; 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _ratio(numerator: float, denominator: float) -> float:
    return 100.0 * numerator / denominator if denominator else 0.0


def weak_counts(predicted: Sequence[set], reference: Sequence[set]) -> tuple[int, int, int]:
    """Returns (TP, FP, FN) over all (clip, class) pairs."""
    if len(predicted) != len(reference):
        raise InvalidArgumentError(
            f"Got {len(predicted)} predicted label sets for {len(reference)} references.")
    tp = fp = fn = 0
    for pred, ref in zip(predicted, reference):
        pred, ref = set(pred), set(ref)
        tp += len(pred & ref)
        fp += len(pred - ref)
        fn += len(ref - pred)
    return tp, fp, fn


def weak_prf(predicted: Sequence[set], reference: Sequence[set]) -> tuple[float, float, float]:
    """Micro-averaged precision, recall and F-score in percent."""
    tp, fp, fn = weak_counts(predicted, reference)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return precision, recall, f_score(precision, recall)


def num_segments(duration_s: float, segment_s: float) -> int:
    if segment_s <= 0:
        raise InvalidArgumentError(f"Segment length must be positive, got {segment_s}.")
    if duration_s <= 0:
        raise InvalidArgumentError(f"Duration must be positive, got {duration_s}.")
    return max(1, math.ceil(duration_s / segment_s - BOUNDARY_SLACK))


def events_to_segments(events: EventList, segment_s: float, duration_s: float,
                       num_classes: int) -> np.ndarray:
    """
    K x C activity: class c is active in segment k if one of its events
    overlaps [k * seg, (k + 1) * seg) by a positive amount. Events are clipped
    to the clip duration.
    """
    k = num_segments(duration_s, segment_s)
    activity = np.zeros((k, num_classes), dtype=np.int64)
    starts = np.arange(k) * segment_s
    for event in events:
        if not 0 <= event.class_index < num_classes:
            raise InvalidArgumentError(
                f"Event class {event.class_index} is outside 0..{num_classes - 1}.")
        onset, offset = max(0.0, event.onset), min(duration_s, event.offset)
        if offset <= onset:
            continue
        hit = (onset < starts + segment_s) & (offset > starts)
        activity[hit, event.class_index] = 1
    return activity


def grid_to_segments(grid: np.ndarray, frame_hop_s: float, segment_s: float,
                     duration_s: float) -> np.ndarray:
    """
    Reduces a T x C binary frame grid to K x C segment activity: a segment is
    active for a class if any frame starting inside it is active.
    """
    grid = np.asarray(grid)
    k = num_segments(duration_s, segment_s)
    activity = np.zeros((k, grid.shape[1]), dtype=np.int64)
    segment_of_frame = np.floor(np.arange(grid.shape[0]) * frame_hop_s / segment_s
                                + BOUNDARY_SLACK).astype(int)
    inside = segment_of_frame < k
    np.maximum.at(activity, segment_of_frame[inside], (grid[inside] > 0).astype(np.int64))
    return activity


def segment_activity(source, segment_s: float, total_duration_s: float,
                     num_classes: int | None = None, frame_hop_s: float | None = None
                     ) -> np.ndarray:
    """
    Segment activity of either an event list (needs num_classes) or a T x C
    binary grid (needs frame_hop_s).
    """
    if isinstance(source, np.ndarray):
        if frame_hop_s is None:
            raise InvalidArgumentError("frame_hop_s is required to rasterise a frame grid.")
        return grid_to_segments(source, frame_hop_s, segment_s, total_duration_s)
    if num_classes is None:
        raise InvalidArgumentError("num_classes is required to rasterise an event list.")
    return events_to_segments(source, segment_s, total_duration_s, num_classes)


@dataclass
class SegmentCounts:
    """Per-segment counts; S, D and I pair false negatives with false positives."""
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    n: np.ndarray

    @property
    def s(self) -> np.ndarray:
        return np.minimum(self.fn, self.fp)

    @property
    def d(self) -> np.ndarray:
        return np.maximum(0, self.fn - self.fp)

    @property
    def i(self) -> np.ndarray:
        return np.maximum(0, self.fp - self.fn)

    def totals(self) -> dict[str, int]:
        return {name: int(getattr(self, name).sum()) for name in ('tp', 'fp', 'fn', 'n', 's', 'd', 'i')}

    def merged(self, other: "SegmentCounts") -> "SegmentCounts":
        return SegmentCounts(*(np.concatenate([getattr(self, a), getattr(other, a)])
                               for a in ('tp', 'fp', 'fn', 'n')))

    @classmethod
    def empty(cls) -> "SegmentCounts":
        return cls(*(np.zeros(0, dtype=np.int64) for _ in range(4)))


def segment_counts(ref_activity: np.ndarray, pred_activity: np.ndarray) -> SegmentCounts:
    ref = np.asarray(ref_activity) > 0
    pred = np.asarray(pred_activity) > 0
    if ref.shape != pred.shape:
        raise ShapeError(f"Reference activity {ref.shape} and prediction {pred.shape} differ in shape.")
    return SegmentCounts(
        tp=(ref & pred).sum(axis=1),
        fp=(~ref & pred).sum(axis=1),
        fn=(ref & ~pred).sum(axis=1),
        n=ref.sum(axis=1),
    )


def f_from_counts(counts: SegmentCounts) -> float:
    t = counts.totals()
    denominator = 2 * t['tp'] + t['fp'] + t['fn']
    return 100.0 * 2 * t['tp'] / denominator if denominator else 0.0


def er_from_counts(counts: SegmentCounts) -> float:
    t = counts.totals()
    if t['n'] == 0:
        raise MetricError("Error rate is undefined: the reference has no active segments.")
    return (t['s'] + t['d'] + t['i']) / t['n']


def segment_f(ref_activity: np.ndarray, pred_activity: np.ndarray) -> float:
    """Segment-based F-score in percent."""
    return f_from_counts(segment_counts(ref_activity, pred_activity))


def segment_er(ref_activity: np.ndarray, pred_activity: np.ndarray) -> float:
    """Segment-based error rate (S + D + I) / N; may exceed 1."""
    return er_from_counts(segment_counts(ref_activity, pred_activity))


@dataclass
class SplitReport:
    """Weak P/R/F in percent; strong ER and F are None when no strong reference exists."""
    precision: float
    recall: float
    f_score: float
    strong_er: float | None = None
    strong_f: float | None = None
    clips: int = 0
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def has_strong(self) -> bool:
        return self.strong_er is not None


CSV_HEADER = ['precision', 'recall', 'f_score', 'strong_er', 'strong_f']


def _fmt(value: float | None, spec: str) -> str:
    return 'n/a' if value is None else format(value, spec)


def format_report(report: SplitReport) -> str:
    """One line, weak P, R, F then strong ER, F."""
    return (f"P {report.precision:.1f}  R {report.recall:.1f}  F {report.f_score:.1f}"
            f"  |  ER {_fmt(report.strong_er, '.2f')}  F {_fmt(report.strong_f, '.1f')}")


def report_to_csv_row(report: SplitReport) -> list[str]:
    return [f"{report.precision:.4f}", f"{report.recall:.4f}", f"{report.f_score:.4f}",
            _fmt(report.strong_er, '.4f'), _fmt(report.strong_f, '.4f')]


def score_split(pred_weak: Sequence[set], ref_weak: Sequence[set],
                strong_pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> SplitReport:
    """
    Builds a report from weak label sets and (reference, prediction) segment
    activity pairs. Strong metrics are omitted when there are no pairs or the
    references hold no active segment.
    """
    precision, recall, f = weak_prf(pred_weak, ref_weak)
    report = SplitReport(precision=precision, recall=recall, f_score=f, clips=len(ref_weak))
    if not strong_pairs:
        logger.warning("No strong references available; strong metrics omitted.")
        return report
    counts = SegmentCounts.empty()
    for ref, pred in strong_pairs:
        counts = counts.merged(segment_counts(ref, pred))
    report.counts = counts.totals()
    report.strong_f = f_from_counts(counts)
    try:
        report.strong_er = er_from_counts(counts)
    except MetricError as e:
        logger.warning("Strong error rate omitted: %s", e)
    return report


def _infer_clip(model, example: "Example", segment_s: float, threshold: float):
    features = example.features
    strong, _ = model.forward_batch(features.values[None, :, :], INFER)
    grid = strong[0]
    pair = None
    if example.strong is not None:
        duration = example.duration_s
        ref_activity = events_to_segments(example.strong, segment_s, duration, grid.shape[1])
        pred_activity = grid_to_segments(binarize(grid, threshold), features.frame_hop_s,
                                         segment_s, duration)
        pair = (ref_activity, pred_activity)
    return weak_from_strong(grid, threshold), set(example.weak), pair


def evaluate_split(model, examples: Sequence["Example"], segment_s: float = 1.0,
                   threshold: float = 0.5, threads: int = 1) -> SplitReport:
    """
    Runs the model on every example and scores the split. Weak predictions are
    derived from the strong output; strong metrics use the examples that carry
    strong references.

    With threads > 1 the examples are cut into contiguous chunks and each
    worker runs its own copy of the model; results are merged in input order.
    """
    if not examples:
        raise InvalidArgumentError("Cannot evaluate an empty split.")
    examples = list(examples)
    if threads <= 1 or len(examples) == 1:
        results = [_infer_clip(model, e, segment_s, threshold) for e in examples]
    else:
        bounds = np.linspace(0, len(examples), min(threads, len(examples)) + 1).astype(int)
        chunks = [examples[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]

        def run_chunk(chunk):
            worker_model = copy.deepcopy(model)
            return [_infer_clip(worker_model, e, segment_s, threshold) for e in chunk]

        results = [r for chunk in parallel_map(run_chunk, chunks, threads) for r in chunk]

    pred_weak = [weak for weak, _, _ in results]
    ref_weak = [ref for _, ref, _ in results]
    strong_pairs = [pair for _, _, pair in results if pair is not None]
    report = score_split(pred_weak, ref_weak, strong_pairs)
    logger.debug("Evaluated %d clips: %s", len(examples), format_report(report))
    return report
