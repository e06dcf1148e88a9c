"""Order-preserving thread pool map.

Results come back in input order whatever the worker count, so callers that
derive per-item seeds from the item index stay deterministic.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def thread_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def child_seed(seed: int, domain: str, *counter: int) -> list[int]:
    """Entropy for ``np.random.default_rng`` keyed by a domain and counter path.

    Counters are shifted by one because SeedSequence ignores trailing zeros.
    """
    return [int(seed) & (2**64 - 1), zlib.crc32(domain.encode()), *(int(c) + 1 for c in counter)]


def child_rng(seed: int, domain: str, *counter: int) -> np.random.Generator:
    return np.random.default_rng(child_seed(seed, domain, *counter))


def derive_seed(seed: int, domain: str, *counter: int) -> int:
    """A 32-bit integer seed for a sub-task, e.g. one cross-validation fold."""
    return int(np.random.SeedSequence(child_seed(seed, domain, *counter)).generate_state(1)[0])
