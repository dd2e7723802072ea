"""
Turning frame probabilities into labels and events.
"""
import logging
from typing import NamedTuple

import numpy as np

from exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


class Event(NamedTuple):
    class_index: int
    onset: float
    offset: float


EventList = list[Event]


def binarize(grid: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """1 where the probability reaches the threshold, else 0."""
    return (np.asarray(grid) >= threshold).astype(np.int64)


def weak_from_strong(strong: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> set[int]:
    """Classes whose maximum frame probability reaches the threshold."""
    strong = np.asarray(strong)
    if strong.ndim != 2 or strong.shape[0] == 0:
        return set()
    return {int(c) for c in np.flatnonzero(strong.max(axis=0) >= threshold)}


def median_filter(grid: np.ndarray, width: int) -> np.ndarray:
    """
    Per-class median filter along time over a binary grid. The clip edges are
    padded by repeating the first and last frame.
    """
    if width < 1 or width % 2 == 0:
        raise InvalidArgumentError(f"Median filter width must be a positive odd number, got {width}.")
    grid = np.asarray(grid)
    if width == 1 or grid.shape[0] == 0:
        return grid.copy()
    half = width // 2
    padded = np.pad(grid, ((half, half), (0, 0)), mode='edge')
    windows = np.lib.stride_tricks.sliding_window_view(padded, width, axis=0)
    return np.median(windows, axis=-1).astype(grid.dtype)


def decode_events(grid: np.ndarray, hop_s: float) -> EventList:
    """
    Maximal runs of active frames per class, as events sorted by class then
    onset. A run over frames a..b becomes (a * hop, (b + 1) * hop).
    """
    grid = np.asarray(grid) > 0
    events = []
    for c in range(grid.shape[1]):
        column = np.concatenate([[False], grid[:, c], [False]]).astype(np.int8)
        changes = np.diff(column)
        starts = np.flatnonzero(changes == 1)
        ends = np.flatnonzero(changes == -1)
        events.extend(Event(c, float(s * hop_s), float(e * hop_s)) for s, e in zip(starts, ends))
    return events


def fill_gaps(events: EventList, min_gap_s: float) -> EventList:
    """Merges same-class events separated by less than min_gap_s seconds."""
    if min_gap_s < 0:
        raise InvalidArgumentError(f"min_gap_s must be nonnegative, got {min_gap_s}.")
    merged = []
    for event in sorted(events, key=lambda e: (e.class_index, e.onset)):
        last = merged[-1] if merged else None
        if last is not None and last.class_index == event.class_index \
                and event.onset - last.offset < min_gap_s:
            merged[-1] = Event(last.class_index, last.onset, max(last.offset, event.offset))
        else:
            merged.append(event)
    return merged
