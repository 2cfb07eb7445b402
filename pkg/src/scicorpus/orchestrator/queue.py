"""Lease-based priority task queue.

The queue is the single point of shared mutation: every transition
(enqueue, lease, heartbeat, report, reap) is atomic under one lock and
linearizable per task. Workers own a task only through a lease that must be
kept alive by heartbeats; the reaper reclaims tasks whose lease heartbeat
has expired and re-queues them with an incremented attempt count, up to a
retry bound after which a task is permanently failed.

Delivery is at-least-once: a reclaimed task may be executed again, so stage
handlers must be idempotent. Lease epochs fence stale workers: a report from
anyone but the current leaseholder is rejected.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from ..errors import ScicorpusError

QUEUED = "queued"
LEASED = "leased"
DONE = "done"
FAILED_PERMANENT = "failed_permanent"

WORKER_ALIVE = "alive"
WORKER_DEAD = "dead"

OUTCOME_DONE = "done"
OUTCOME_FAILED = "failed"

DEFAULT_HEARTBEAT_TIMEOUT = 60.0
DEFAULT_REAP_PERIOD = 15.0
DEFAULT_MAX_ATTEMPTS = 3


class DuplicateTaskError(ScicorpusError):
    pass


class UnknownWorkerError(ScicorpusError):
    pass


class UnknownTaskError(ScicorpusError):
    pass


class StaleLeaseError(ScicorpusError):
    """Report from a worker that no longer holds the task's lease."""


@dataclass
class Lease:
    worker_id: str
    leased_at: float
    last_heartbeat: float


@dataclass
class TaskRecord:
    task_id: str
    kind: str
    payload_ref: str = ""
    priority: int = 0
    attempts: int = 0
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    status: str = QUEUED
    lease: Lease | None = None
    lease_epoch: int = 0
    payload: dict | None = None

    def to_record(self) -> dict:
        rec = {
            "task_id": self.task_id,
            "kind": self.kind,
            "payload_ref": self.payload_ref,
            "priority": self.priority,
            "attempts": self.attempts,
            "max_attempts": self.max_attempts,
            "status": self.status,
            "lease_epoch": self.lease_epoch,
            "payload": self.payload,
        }
        if self.lease is not None:
            rec["lease"] = {
                "worker_id": self.lease.worker_id,
                "leased_at": self.lease.leased_at,
                "last_heartbeat": self.lease.last_heartbeat,
            }
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "TaskRecord":
        lease = rec.get("lease")
        return cls(
            task_id=rec["task_id"],
            kind=rec["kind"],
            payload_ref=rec.get("payload_ref", ""),
            priority=rec.get("priority", 0),
            attempts=rec.get("attempts", 0),
            max_attempts=rec.get("max_attempts", DEFAULT_MAX_ATTEMPTS),
            status=rec.get("status", QUEUED),
            lease=Lease(**lease) if lease else None,
            lease_epoch=rec.get("lease_epoch", 0),
            payload=rec.get("payload"),
        )


@dataclass
class WorkerRecord:
    worker_id: str
    last_heartbeat: float
    state: str = WORKER_ALIVE
    leased_tasks: set[str] = field(default_factory=set)


class TaskQueue:
    def __init__(
        self,
        heartbeat_timeout: float = DEFAULT_HEARTBEAT_TIMEOUT,
        reap_period: float = DEFAULT_REAP_PERIOD,
        default_max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        clock: Callable[[], float] = time.time,
    ):
        self.heartbeat_timeout = heartbeat_timeout
        self.reap_period = reap_period
        self.default_max_attempts = default_max_attempts
        self.clock = clock
        self._lock = threading.Lock()
        self._tasks: dict[str, TaskRecord] = {}
        self._workers: dict[str, WorkerRecord] = {}
        self._heap: list[tuple[int, int, str]] = []  # (-priority, seq, task_id)
        self._seq = itertools.count()
        self.reclaimed_total = 0
        self.stale_rejections = 0

    # -- producers ----------------------------------------------------------

    def enqueue(
        self,
        task_id: str,
        kind: str,
        payload_ref: str = "",
        priority: int = 0,
        max_attempts: int | None = None,
        payload: dict | None = None,
    ) -> str:
        with self._lock:
            if task_id in self._tasks:
                raise DuplicateTaskError(f"task {task_id!r} already enqueued")
            task = TaskRecord(
                task_id=task_id,
                kind=kind,
                payload_ref=payload_ref,
                priority=priority,
                max_attempts=max_attempts if max_attempts is not None else self.default_max_attempts,
                payload=payload,
            )
            self._tasks[task_id] = task
            heapq.heappush(self._heap, (-priority, next(self._seq), task_id))
            return task_id

    # -- workers ------------------------------------------------------------

    def register_worker(self, worker_id: str) -> None:
        with self._lock:
            now = self.clock()
            record = self._workers.get(worker_id)
            if record is None:
                self._workers[worker_id] = WorkerRecord(worker_id=worker_id, last_heartbeat=now)
            else:
                record.last_heartbeat = now
                record.state = WORKER_ALIVE

    def lease_next(self, worker_id: str) -> TaskRecord | None:
        """Atomically move the highest-priority queued task to this worker.
        FIFO within equal priority; None when the queue is drained."""
        with self._lock:
            worker = self._workers.get(worker_id)
            if worker is None:
                raise UnknownWorkerError(f"worker {worker_id!r} is not registered")
            now = self.clock()
            worker.last_heartbeat = now  # fetching proves liveness
            worker.state = WORKER_ALIVE
            while self._heap:
                _neg, _seq, task_id = heapq.heappop(self._heap)
                task = self._tasks[task_id]
                if task.status != QUEUED:
                    continue  # superseded heap entry
                task.status = LEASED
                task.lease = Lease(worker_id=worker_id, leased_at=now, last_heartbeat=now)
                task.lease_epoch += 1
                worker.leased_tasks.add(task_id)
                return task
            return None

    def heartbeat(self, worker_id: str) -> None:
        """Refresh the worker and all its leased tasks; a heartbeat from a
        dead-marked worker re-registers it as alive."""
        with self._lock:
            worker = self._workers.get(worker_id)
            if worker is None:
                raise UnknownWorkerError(f"worker {worker_id!r} is not registered")
            now = self.clock()
            worker.last_heartbeat = now
            worker.state = WORKER_ALIVE
            for task_id in worker.leased_tasks:
                task = self._tasks[task_id]
                if task.status == LEASED and task.lease and task.lease.worker_id == worker_id:
                    task.lease.last_heartbeat = now

    def report_result(self, worker_id: str, task_id: str, outcome: str) -> str:
        """Record a completion. Only the current leaseholder may report; the
        first done recorded is final. Returns the task's new status."""
        if outcome not in (OUTCOME_DONE, OUTCOME_FAILED):
            raise ValueError(f"outcome must be done|failed, got {outcome!r}")
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                raise UnknownTaskError(f"unknown task {task_id!r}")
            if task.status != LEASED or task.lease is None or task.lease.worker_id != worker_id:
                self.stale_rejections += 1
                raise StaleLeaseError(
                    f"task {task_id!r} is not leased by {worker_id!r} (status={task.status})"
                )
            self._release(task)
            if outcome == OUTCOME_DONE:
                task.status = DONE
            else:
                self._retry_or_fail(task)
            return task.status

    # -- reaper -------------------------------------------------------------

    def reap_orphans(self, now: float | None = None) -> list[str]:
        """Reclaim tasks whose lease heartbeat has expired; mark their
        workers dead. Returns the task ids put back on the queue."""
        requeued = []
        with self._lock:
            if now is None:
                now = self.clock()
            for worker in self._workers.values():
                if now - worker.last_heartbeat > self.heartbeat_timeout:
                    worker.state = WORKER_DEAD
            for task in self._tasks.values():
                if task.status != LEASED or task.lease is None:
                    continue
                if now - task.lease.last_heartbeat <= self.heartbeat_timeout:
                    continue
                self._release(task)
                was_queued = self._retry_or_fail(task)
                if was_queued:
                    requeued.append(task.task_id)
                    self.reclaimed_total += 1
        return requeued

    # -- internals (lock held) ----------------------------------------------

    def _release(self, task: TaskRecord) -> None:
        worker = self._workers.get(task.lease.worker_id) if task.lease else None
        if worker is not None:
            worker.leased_tasks.discard(task.task_id)
        task.lease = None

    def _retry_or_fail(self, task: TaskRecord) -> bool:
        """Requeue with attempts+1, or fail permanently at the bound.
        Returns True when the task went back on the queue."""
        if task.attempts >= task.max_attempts:
            task.status = FAILED_PERMANENT
            return False
        task.attempts += 1
        task.status = QUEUED
        heapq.heappush(self._heap, (-task.priority, next(self._seq), task.task_id))
        return True

    # -- introspection -------------------------------------------------------

    def get_task(self, task_id: str) -> TaskRecord:
        with self._lock:
            return self._tasks[task_id]

    def leased_snapshot(self) -> list[tuple[str, str, float]]:
        """(task_id, worker_id, lease_last_heartbeat) for every leased task."""
        with self._lock:
            return [
                (t.task_id, t.lease.worker_id, t.lease.last_heartbeat)
                for t in self._tasks.values()
                if t.status == LEASED and t.lease is not None
            ]

    def max_queued_priority(self) -> int | None:
        with self._lock:
            queued = [t.priority for t in self._tasks.values() if t.status == QUEUED]
            return max(queued) if queued else None

    def counts(self) -> dict[str, int]:
        with self._lock:
            out = {QUEUED: 0, LEASED: 0, DONE: 0, FAILED_PERMANENT: 0}
            for task in self._tasks.values():
                out[task.status] += 1
            return out

    def stats(self) -> dict:
        with self._lock:
            by_status = {QUEUED: 0, LEASED: 0, DONE: 0, FAILED_PERMANENT: 0}
            for task in self._tasks.values():
                by_status[task.status] += 1
            now = self.clock()
            workers = {
                w.worker_id: {
                    "state": w.state,
                    "heartbeat_age": round(now - w.last_heartbeat, 3),
                    "leased_tasks": len(w.leased_tasks),
                }
                for w in self._workers.values()
            }
            return {
                "tasks": by_status,
                "workers": workers,
                "reclaimed_total": self.reclaimed_total,
                "stale_rejections": self.stale_rejections,
            }

    def all_terminal(self) -> bool:
        with self._lock:
            return all(t.status in (DONE, FAILED_PERMANENT) for t in self._tasks.values())
