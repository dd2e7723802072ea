import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """
    Applies func to every item, on up to `threads` worker threads.

    Results come back in input order. With threads <= 1 everything runs
    inline on the calling thread. The first exception raised by a worker is
    re-raised here.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    workers = min(threads, len(items))
    logger.debug("Mapping %d items over %d threads.", len(items), workers)
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix='wsed') as pool:
        return list(pool.map(func, items))
