import logging
import threading
from typing import Any, Callable, List, Optional, Sequence

from PyQt6 import QtCore

from config import get_configured_workers


# --- queue events forwarded to logging and an optional progress callback ---
class LogQueue:
    def __init__(self, target: logging.Logger, progress: Optional[Callable[[int], None]] = None):
        self.target = target
        self.progress = progress

    def put(self, item):
        try:
            msg_type = item[0]
            payload = item[1] if len(item) > 1 else None
        except Exception:
            return
        if msg_type == "log":
            self.target.info(str(payload))
        elif msg_type == "progress":
            try:
                pct = int(payload)
            except (TypeError, ValueError):
                return
            self.target.debug("progress %d%%", pct)
            if self.progress is not None:
                self.progress(pct)
        elif msg_type == "done":
            self.target.info("done: %s", payload)


class ReplicaTask(QtCore.QRunnable):
    """One replica run on the thread pool; the result or the exception is kept on the task."""

    def __init__(self, index: int, fn: Callable[[], Any], cancel_event: threading.Event):
        super().__init__()
        self.setAutoDelete(False)
        self.index = index
        self.fn = fn
        self.cancel_event = cancel_event
        self.result: Any = None
        self.error: Optional[BaseException] = None

    def run(self):
        if self.cancel_event.is_set():
            return
        try:
            self.result = self.fn()
        except Exception as e:
            self.error = e
            self.cancel_event.set()


def run_replicas(tasks: Sequence[Callable[[], Any]], workers: Optional[int] = None,
                 cancel_event: Optional[threading.Event] = None,
                 queue: Optional[LogQueue] = None) -> List[Any]:
    """
    Run independent tasks and return their results in task order.
    Cancelled or skipped tasks yield None; the first failure is re-raised
    after the pool drains.
    """
    cancel_event = cancel_event or threading.Event()
    workers = get_configured_workers() if workers is None else workers
    jobs = [ReplicaTask(i, fn, cancel_event) for i, fn in enumerate(tasks)]
    if not jobs:
        return []

    if workers == 1:
        for done, job in enumerate(jobs, 1):
            job.run()
            if queue is not None:
                queue.put(("progress", 100 * done // len(jobs)))
            if job.error is not None:
                break
    else:
        pool = QtCore.QThreadPool()
        if workers > 1:
            pool.setMaxThreadCount(workers)
        if queue is not None:
            queue.put(("log", f"running {len(jobs)} replicas on {pool.maxThreadCount()} threads"))
        for job in jobs:
            pool.start(job)
        pool.waitForDone()
        if queue is not None:
            queue.put(("progress", 100))

    for job in jobs:
        if job.error is not None:
            raise job.error
    return [job.result for job in jobs]
