"""Fixed-size path blocks with one RNG stream each, optionally run on threads.

Block boundaries never depend on the thread count, so results are identical
for any ``threads`` value.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .rng import RngStream

BLOCK = 512
_threads = int(os.environ.get("TRACERHOM_THREADS", "1"))


def set_threads(n: int) -> None:
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    return _threads


def block_sizes(n: int, block: int = BLOCK) -> list[int]:
    full, rest = divmod(n, block)
    return [block] * full + ([rest] if rest else [])


def run_blocks(fn, n: int, rng: RngStream, block: int = BLOCK, threads: int | None = None) -> list:
    """Call ``fn(stream, start, size)`` per block; results are returned in block order."""
    sizes = block_sizes(n, block)
    streams = rng.split(len(sizes))
    starts = [sum(sizes[:i]) for i in range(len(sizes))]
    threads = threads or _threads
    jobs = list(zip(streams, starts, sizes))
    if threads <= 1 or len(jobs) == 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda j: fn(*j), jobs))
