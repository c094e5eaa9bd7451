import logging
from typing import Any, Callable, Iterable, Optional

from joblib import Parallel, delayed


class TaskRunner:
    """Runs independent work units (folds, splits, replicates) and returns results in task order"""
    _logger = logging.getLogger(__name__)

    def __init__(self, threads: int = 1, callback: Optional[Callable] = None):
        if threads < 1:
            raise ValueError("threads must be at least 1")
        self._threads = threads
        self._callback = callback

    @property
    def threads(self) -> int:
        return self._threads

    def map(self, function: Callable, tasks: Iterable[Any]) -> list:
        """Apply function to every task; the merge order never depends on scheduling"""
        tasks = list(tasks)
        self._logger.debug("Running {} task(s) on {} worker(s)".format(len(tasks), self._threads))
        if self._callback is not None:
            self._callback("start", len(tasks))

        if self._threads == 1 or len(tasks) < 2:
            results = [function(task) for task in tasks]
        else:
            results = Parallel(n_jobs=min(self._threads, len(tasks)), backend='threading')(
                delayed(function)(task) for task in tasks)

        if self._callback is not None:
            self._callback("stop", len(results))
        return list(results)

    def inner(self) -> "TaskRunner":
        """Runner for work nested inside one of this runner's tasks"""
        if self._threads == 1:
            return self
        return TaskRunner(1)


SEQUENTIAL = TaskRunner(1)
