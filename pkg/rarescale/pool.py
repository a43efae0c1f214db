"""
Work Pool

Bounded thread pool for per-disease and per-case batch stages, plus a keyed
lock registry for single-writer resources (the phrase bank is written per
disease).

Results come back in submission order regardless of completion order, so a
parallel run writes the same files as a serial one.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class WorkPool:
    def __init__(self, workers: int = 1, label: str = "work"):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.workers = workers
        self.label = label
        self._lock = threading.Lock()
        self._total = 0
        self._done = 0
        self._failed = 0
        self._running = 0

    def _start(self):
        with self._lock:
            self._running += 1

    def _finish(self, ok: bool):
        with self._lock:
            self._running -= 1
            if ok:
                self._done += 1
            else:
                self._failed += 1
            done, total = self._done + self._failed, self._total
        if total and (done == total or done % max(1, total // 10) == 0):
            logger.info("%s: %d/%d finished", self.label, done, total)

    def progress(self) -> dict:
        """Snapshot of the counters."""
        with self._lock:
            return {
                "label": self.label,
                "total": self._total,
                "done": self._done,
                "failed": self._failed,
                "running": self._running,
            }

    def _run(self, fn: Callable[[T], R], item: T) -> R:
        self._start()
        try:
            result = fn(item)
        except BaseException:
            self._finish(False)
            raise
        self._finish(True)
        return result

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        """Apply ``fn`` to every item; results in input order.

        The first failing item (in input order) re-raises its exception after
        all submitted work has settled.
        """
        items = list(items)
        with self._lock:
            self._total += len(items)
        if self.workers == 1 or len(items) <= 1:
            return [self._run(fn, item) for item in items]

        with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix=self.label) as executor:
            futures = [executor.submit(self._run, fn, item) for item in items]
        return [f.result() for f in futures]


class KeyedLocks:
    """One lock per key, created on first use."""

    def __init__(self):
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}

    def get(self, key: str) -> threading.Lock:
        with self._guard:
            lock = self._locks.get(key)
            if lock is None:
                lock = self._locks[key] = threading.Lock()
            return lock

    @contextmanager
    def hold(self, key: str) -> Iterator[None]:
        with self.get(key):
            yield

    def keys(self, prefix: Optional[str] = None) -> list[str]:
        with self._guard:
            return sorted(k for k in self._locks if prefix is None or k.startswith(prefix))
