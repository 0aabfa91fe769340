from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from functools import reduce
from typing import Callable, List, Optional, Tuple, TypeVar

from ..config import Config
from ..errors import ParameterError


T = TypeVar("T")
Block = Tuple[int, int, int]


def block_ranges(reps: int, block_size: int) -> List[Block]:
    """(block_index, start, stop) triples; boundaries depend only on reps and block_size."""
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    if block_size < 1:
        raise ParameterError("block_size must be >= 1")
    return [(i, start, min(start + block_size, reps))
            for i, start in enumerate(range(0, reps, block_size))]


def _start_method() -> str:
    methods = multiprocessing.get_all_start_methods()
    if os.name == "posix" and "fork" in methods:
        return "fork"
    return "spawn"


def _run_block(task: Callable[[int, int, int], T], block: Block) -> Tuple[int, T]:
    return block[0], task(*block)


def map_blocks(task: Callable[[int, int, int], T], reps: int, block_size: int,
               workers: Optional[int] = None) -> List[T]:
    """Run ``task(block_index, start, stop)`` over all blocks, results in block order.

    ``task`` must be picklable when workers > 1 (a module-level function or a
    functools.partial of one).
    """
    blocks = block_ranges(reps, block_size)
    workers = max(1, min(workers or Config.WORKERS, len(blocks)))
    if workers == 1:
        return [task(*block) for block in blocks]

    results = {}
    context = multiprocessing.get_context(_start_method())
    with ProcessPoolExecutor(max_workers=workers, mp_context=context) as executor:
        futures = [executor.submit(_run_block, task, block) for block in blocks]
        for future in futures:
            index, value = future.result()
            results[index] = value
    return [results[index] for index in sorted(results)]


def reduce_blocks(merge: Callable[[T, T], T], parts: List[T]) -> T:
    """Left fold in block order, so the merged value does not depend on scheduling."""
    return reduce(merge, parts)
