"""
Thread pool runner for independent numerical tasks (grid points, xi samples, protocol runs).

Features:
- ThreadPoolExecutor-backed execution; max_workers == 1 runs inline in the caller
- Per-task status and elapsed time tracking
- Results returned in input order, never completion order
- A failing task never aborts the batch: its exception is stored on the Task
"""
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence

logger = logging.getLogger("thread_pool_manager")


class TaskStatus(Enum):
    """Task execution status"""
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class Task:
    """One unit of independent work"""
    id: int
    label: str
    func: Callable[[], Any]
    status: TaskStatus = TaskStatus.PENDING
    result: Any = None
    error: Optional[Exception] = None
    started_at: Optional[float] = None
    completed_at: Optional[float] = None

    @property
    def elapsed_time(self) -> float:
        """Get elapsed time for the task"""
        if self.started_at:
            end = self.completed_at or time.time()
            return end - self.started_at
        return 0.0

    @property
    def succeeded(self) -> bool:
        return self.status == TaskStatus.COMPLETED


def resolve_worker_count(requested: Optional[int] = None, configured: Optional[int] = None) -> int:
    """
    Worker count: explicit request, then configured value, then 1.

    BOSELOC_THREADS reaches the configured value through the config layer.
    """
    for candidate in (requested, configured):
        if candidate is None or candidate == "":
            continue
        try:
            count = int(candidate)
        except (TypeError, ValueError):
            logger.warning(f"Ignoring invalid worker count: {candidate!r}")
            continue
        if count >= 1:
            return count
        logger.warning(f"Ignoring non-positive worker count: {count}")
    return 1


class ParallelTaskRunner:
    """
    Runs a batch of tasks on a thread pool and merges results by input position.
    """

    def __init__(self, max_workers: int = 1):
        self.max_workers = max(1, int(max_workers))
        self._lock = threading.Lock()
        self.completed_tasks: Dict[int, Task] = {}
        logger.info(f"ParallelTaskRunner initialized with {self.max_workers} workers")

    def _execute_task(self, task: Task) -> Task:
        """Execute a task and record result/error"""
        task.started_at = time.time()
        task.status = TaskStatus.RUNNING
        try:
            logger.debug(f"Executing task {task.id} ({task.label})")
            task.result = task.func()
            task.status = TaskStatus.COMPLETED
        except Exception as e:
            logger.error(f"Task {task.id} ({task.label}) failed: {e}")
            task.error = e
            task.status = TaskStatus.FAILED
        finally:
            task.completed_at = time.time()
            with self._lock:
                self.completed_tasks[task.id] = task
        return task

    def run(self, tasks: Sequence[Task]) -> List[Task]:
        """
        Execute all tasks.

        Returns:
            The same Task objects, in input order, with status/result/error filled in
        """
        tasks = list(tasks)
        if not tasks:
            return []

        started = time.time()
        if self.max_workers == 1 or len(tasks) == 1:
            for task in tasks:
                self._execute_task(task)
        else:
            with ThreadPoolExecutor(
                max_workers=min(self.max_workers, len(tasks)),
                thread_name_prefix="BoselocWorker"
            ) as executor:
                futures = {executor.submit(self._execute_task, task): task for task in tasks}
                for done, future in enumerate(as_completed(futures), start=1):
                    task = futures[future]
                    logger.debug(f"[{done}/{len(tasks)}] {task.label} finished in {task.elapsed_time:.2f}s")

        failed = sum(1 for task in tasks if not task.succeeded)
        logger.info(
            f"Ran {len(tasks)} tasks in {time.time() - started:.2f}s "
            f"({failed} failed, {self.max_workers} workers)"
        )
        return tasks

    def map(self, func: Callable[[Any], Any], items: Sequence[Any], label: str = "task") -> List[Task]:
        """Convenience wrapper: one task per item, func(item) as the work."""
        tasks = [
            Task(id=i, label=f"{label}[{i}]", func=(lambda item=item: func(item)))
            for i, item in enumerate(items)
        ]
        return self.run(tasks)

    def get_pool_stats(self) -> Dict[str, Any]:
        """Get statistics over every task run so far"""
        with self._lock:
            tasks = list(self.completed_tasks.values())
        return {
            'max_workers': self.max_workers,
            'completed_tasks': sum(1 for t in tasks if t.status == TaskStatus.COMPLETED),
            'failed_tasks': sum(1 for t in tasks if t.status == TaskStatus.FAILED),
            'total_task_seconds': round(sum(t.elapsed_time for t in tasks), 3),
        }
