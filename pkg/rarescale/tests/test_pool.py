"""Tests for the work pool and keyed locks."""
import threading
import time

import pytest

from rarescale.pool import KeyedLocks, WorkPool


def test_results_keep_input_order():
    def slow_square(x):
        time.sleep(0.001 * (10 - x))
        return x * x

    assert WorkPool(4).map(slow_square, range(10)) == [x * x for x in range(10)]


def test_first_failure_in_input_order_is_raised():
    seen = []
    lock = threading.Lock()

    def work(x):
        with lock:
            seen.append(x)
        if x in (3, 7):
            raise ValueError(f"bad {x}")
        return x

    pool = WorkPool(3, label="t")
    with pytest.raises(ValueError, match="bad 3"):
        pool.map(work, range(10))
    assert sorted(seen) == list(range(10))
    progress = pool.progress()
    assert progress["failed"] == 2 and progress["done"] == 8 and progress["running"] == 0


def test_worker_count_validation():
    with pytest.raises(ValueError):
        WorkPool(0)


def test_keyed_locks_serialize_one_key():
    locks = KeyedLocks()
    counter = {"n": 0, "max": 0}

    def work(_):
        with locks.hold("D1"):
            counter["n"] += 1
            counter["max"] = max(counter["max"], counter["n"])
            time.sleep(0.001)
            counter["n"] -= 1

    WorkPool(4).map(work, range(12))
    assert counter["max"] == 1
    assert locks.get("D1") is locks.get("D1")
    locks.get("D2")
    assert locks.keys() == ["D1", "D2"]
    assert locks.keys("D2") == ["D2"]
