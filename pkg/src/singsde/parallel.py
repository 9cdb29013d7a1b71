"""Deterministic chunked Monte Carlo.

Work is split into fixed-size chunks keyed by chunk index; each chunk gets its
own :class:`RngStream`.  Chunk boundaries and the reduction order never depend
on the worker count, so results are bit-identical for any ``workers``.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

from .noise import RngStream

T = TypeVar("T")

DEFAULT_CHUNK = 1024


def default_workers() -> int:
    env = os.environ.get("SINGSDE_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def chunk_sizes(total: int, chunk: int = DEFAULT_CHUNK) -> list[int]:
    if total < 1:
        raise ValueError("need at least one sample")
    full, rest = divmod(total, chunk)
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(
    fn: Callable[[RngStream, int], T],
    total: int,
    rng: RngStream,
    chunk: int = DEFAULT_CHUNK,
    workers: int | None = None,
) -> list[T]:
    """Run ``fn(rng.child(i), size_i)`` for every chunk, results in chunk order."""
    sizes = chunk_sizes(total, chunk)
    workers = default_workers() if workers is None else workers
    jobs = [(rng.child(i), s) for i, s in enumerate(sizes)]
    if workers <= 1 or len(jobs) == 1:
        return [fn(r, s) for r, s in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(p) for p in parts], axis=0)
