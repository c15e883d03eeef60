"""Deterministic fan-out over fixed-size blocks of independent work items.

Block boundaries depend only on the item count, never on the worker count, so
results are identical for any ``ERGOKIT_THREADS`` value.
"""

import os
from concurrent.futures import ThreadPoolExecutor

BLOCK = 4096


def n_threads():
    raw = os.environ.get("ERGOKIT_THREADS")
    if raw is None:
        return min(4, os.cpu_count() or 1)
    n = int(raw)
    if n < 1:
        raise ValueError("ERGOKIT_THREADS must be >= 1")
    return n


def blocks(n, size=BLOCK):
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def map_blocks(fn, n, size=BLOCK, threads=None):
    """Apply ``fn(lo, hi)`` to every block and return results in block order."""
    spans = blocks(n, size)
    threads = n_threads() if threads is None else threads
    if threads == 1 or len(spans) <= 1:
        return [fn(lo, hi) for lo, hi in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: fn(*s), spans))
