"""Order-preserving thread-pool map.

Work items are mapped independently and results reduced in submission
order, so the thread count changes wall time but never output bits. The
global cap is set once by the CLI's --threads flag.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

_max_threads = 1


def set_threads(n):
    global _max_threads
    _max_threads = max(1, int(n))


def get_threads():
    return _max_threads


def parallel_map(fn, items):
    items = list(items)
    if _max_threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=_max_threads) as pool:
        return list(pool.map(fn, items))
