import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, List, Optional, Sequence

logger = logging.getLogger(__name__)

WORKERS_ENV = 'DRC_SIM_WORKERS'


def resolve_workers(requested: Optional[int]) -> int:
    """--workers wins, then DRC_SIM_WORKERS, then 1."""
    if requested is not None:
        workers = requested
    else:
        raw = os.getenv(WORKERS_ENV)
        try:
            workers = int(raw) if raw else 1
        except ValueError:
            logger.warning(f"Ignoring non-integer {WORKERS_ENV}={raw!r}")
            workers = 1
    return max(int(workers), 1)


class Processor:
    """
    Maps a top-level function over an ordered task list in batches. Results always come back in
    task order, whatever the worker count, so outputs never depend on scheduling.
    """

    def __init__(self, workers: int = 1, batch_size: Optional[int] = None):
        self.workers = max(int(workers), 1)
        self.batch_size = batch_size or max(4 * self.workers, 8)

    def map(self, fn: Callable[[Any], Any], tasks: Sequence[Any]) -> List[Any]:
        tasks = list(tasks)
        if not tasks:
            logger.warning("No tasks to run.")
            return []
        total_batches = math.ceil(len(tasks) / self.batch_size)
        logger.info(f"Running {len(tasks)} tasks on {self.workers} worker(s) in {total_batches} batch(es)")
        start_time = time.time()
        results: List[Any] = []

        if self.workers == 1:
            for i in range(0, len(tasks), self.batch_size):
                batch_num = i // self.batch_size + 1
                results.extend(fn(t) for t in tasks[i:i + self.batch_size])
                logger.debug(f"Batch {batch_num}/{total_batches} done")
        else:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                for i in range(0, len(tasks), self.batch_size):
                    batch_num = i // self.batch_size + 1
                    results.extend(pool.map(fn, tasks[i:i + self.batch_size]))
                    logger.debug(f"Batch {batch_num}/{total_batches} done")

        logger.info(f"Finished {len(tasks)} tasks in {time.time() - start_time:.2f}s")
        return results

    __call__ = map
