"""
Tests for the parallel task runner.
"""
import time

import pytest

from src.utils.config import Config
from src.utils.thread_pool_manager import ParallelTaskRunner, Task, TaskStatus, resolve_worker_count


def _slow_square(x):
    # later items finish first, so completion order differs from input order
    time.sleep(0.01 * (5 - x))
    return x * x


@pytest.mark.parametrize("workers", [1, 4])
def test_results_keep_input_order(workers):
    runner = ParallelTaskRunner(workers)
    tasks = runner.map(_slow_square, list(range(5)), label="square")
    assert [task.result for task in tasks] == [0, 1, 4, 9, 16]
    assert [task.label for task in tasks] == [f"square[{i}]" for i in range(5)]
    assert all(task.status == TaskStatus.COMPLETED for task in tasks)


def test_failing_task_does_not_abort_batch():
    def explode():
        raise ValueError("bad point")

    runner = ParallelTaskRunner(2)
    tasks = runner.run([
        Task(id=0, label="ok", func=lambda: 1),
        Task(id=1, label="bad", func=explode),
        Task(id=2, label="ok2", func=lambda: 3),
    ])
    assert [task.succeeded for task in tasks] == [True, False, True]
    assert isinstance(tasks[1].error, ValueError)
    assert tasks[1].elapsed_time >= 0.0

    stats = runner.get_pool_stats()
    assert stats['completed_tasks'] == 2
    assert stats['failed_tasks'] == 1
    assert stats['max_workers'] == 2


def test_empty_batch():
    assert ParallelTaskRunner(3).run([]) == []


def test_resolve_worker_count(monkeypatch):
    monkeypatch.delenv("BOSELOC_THREADS", raising=False)
    assert resolve_worker_count() == 1
    assert resolve_worker_count(None, 3) == 3
    assert resolve_worker_count(5, 3) == 5
    assert resolve_worker_count(0, 2) == 2
    assert resolve_worker_count(None, "many") == 1


def test_thread_environment_reaches_runner_through_config(tmp_path, monkeypatch):
    monkeypatch.setenv("BOSELOC_THREADS", "6")
    config = Config(config_file=str(tmp_path / "missing.yaml"))
    assert resolve_worker_count(None, config.get_max_threads()) == 6
    assert resolve_worker_count(2, config.get_max_threads()) == 2
    monkeypatch.delenv("BOSELOC_THREADS")
    assert resolve_worker_count(None, Config(config_file=str(tmp_path / "missing.yaml")).get_max_threads()) == 1
