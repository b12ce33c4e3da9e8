"""Ordered thread-pool map used by the probe, build and Monte-Carlo loops.

Work items are processed by up to ``threads`` workers but results are always
returned in input order, so reductions over them do not depend on the
worker count.  The compiled kernels release the GIL, which is what makes
threads useful here.
"""
from concurrent.futures import ThreadPoolExecutor

_default_threads = 1


def set_default_threads(threads: int) -> None:
    global _default_threads
    if threads < 1:
        raise ValueError("threads must be >= 1")
    _default_threads = int(threads)


def get_default_threads() -> int:
    return _default_threads


def ordered_map(fn, items, threads=None):
    """``list(map(fn, items))`` evaluated on a thread pool."""
    items = list(items)
    threads = _default_threads if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
