"""
Batch operations service for per-sample parallel work
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, Iterator, List

from src.config.settings import DEFAULT_THREADS


class BatchOperationsService:
    """Runs independent per-sample jobs on a bounded thread pool

    Results always come back in submission order, so reductions over them
    (gradient sums, prediction lists) do not depend on thread scheduling.
    """

    def __init__(self, max_workers: int = DEFAULT_THREADS):
        self.max_workers = max(1, int(max_workers))

    def configure(self, max_workers: int):
        """Set the worker bound (the --threads flag)"""
        if int(max_workers) < 1:
            raise ValueError(f'--threads must be >= 1, got {max_workers}')
        self.max_workers = int(max_workers)

    def map_ordered(self, fn: Callable[[Any], Any], items: Iterable[Any]) -> List[Any]:
        """
        Apply fn to every item, in parallel when more than one worker is allowed

        Args:
            fn: job for a single item; must not mutate shared state
            items: job inputs

        Returns:
            fn(item) for every item, in input order. The first failing item
            (in input order) re-raises its exception after all jobs finished.
        """
        items = list(items)
        if self.max_workers == 1 or len(items) <= 1:
            return [fn(item) for item in items]

        with ThreadPoolExecutor(max_workers=min(self.max_workers, len(items))) as executor:
            futures = [executor.submit(fn, item) for item in items]

        results = []
        for future in futures:
            # result() re-raises the job's own exception
            results.append(future.result())
        return results

    def imap_ordered(self, fn: Callable[[Any], Any], items: Iterable[Any]) -> Iterator[Any]:
        """Generator form of map_ordered: each result is yielded, in input order, once it is ready"""
        items = list(items)
        if self.max_workers == 1 or len(items) <= 1:
            for item in items:
                yield fn(item)
            return

        with ThreadPoolExecutor(max_workers=min(self.max_workers, len(items))) as executor:
            yield from executor.map(fn, items)


# Global batch operations service instance
batch_operations_service = BatchOperationsService()
