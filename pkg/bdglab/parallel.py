"""
Seeded replication pool.

A replication's random stream depends only on (master seed, stream id, index), so the
results are the same whatever the worker count; the pool only changes wall time.
"""

import logging
import zlib
from multiprocessing import Pool
from typing import Callable, List, Optional, TypeVar

import numpy as np

from .settings import resolve_workers

logger = logging.getLogger(__name__)

T = TypeVar("T")


def stream_id(name: str) -> int:
    """Stable 32-bit id for a named stream (experiment name, check id, ...)."""
    return zlib.crc32(name.encode("utf-8"))


def replication_seed(master_seed: int, stream: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(stream), int(index)])


def replication_rng(master_seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(replication_seed(master_seed, stream, index))


def _replication_worker(args):
    fn, index, master_seed, stream = args
    return fn(index, replication_rng(master_seed, stream, index))


def map_replications(
    fn: Callable[[int, np.random.Generator], T],
    count: int,
    master_seed: int,
    stream: int,
    workers: Optional[int] = None,
) -> List[T]:
    """[fn(i, rng_i) for i in range(count)], in index order.

    `fn` must be picklable (a module-level function or a functools.partial of one) when
    more than one worker is used.
    """
    workers = resolve_workers(workers)
    tasks = [(fn, i, master_seed, stream) for i in range(count)]
    if workers <= 1 or count <= 1:
        return [_replication_worker(t) for t in tasks]
    logger.debug("replication pool: %d tasks over %d workers (stream %d)", count, workers, stream)
    chunk = max(1, count // (4 * workers))
    with Pool(processes=workers) as pool:
        return pool.map(_replication_worker, tasks, chunksize=chunk)
