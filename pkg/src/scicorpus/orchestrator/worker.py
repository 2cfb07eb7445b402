"""Worker runtime and backend supervision.

A worker registers, heartbeats on a background thread, and loops
lease -> execute -> report. Handlers are looked up by task kind and must be
idempotent (at-least-once delivery). The same runtime drives an in-process
TaskQueue or a remote QueueClient.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from typing import Callable

from .queue import OUTCOME_FAILED, StaleLeaseError, TaskRecord

log = logging.getLogger(__name__)

Handler = Callable[[TaskRecord], str]  # returns "done" | "failed"


class WorkerRuntime:
    def __init__(
        self,
        queue,
        worker_id: str,
        handlers: dict[str, Handler],
        heartbeat_interval: float = 5.0,
        poll_interval: float = 0.05,
        drain: bool = False,
    ):
        self.queue = queue
        self.worker_id = worker_id
        self.handlers = handlers
        self.heartbeat_interval = heartbeat_interval
        self.poll_interval = poll_interval
        self.drain = drain  # stop once the queue has no work for us
        self.stop_event = threading.Event()
        self.processed = 0

    def _heartbeat_loop(self) -> None:
        while not self.stop_event.wait(self.heartbeat_interval):
            try:
                self.queue.heartbeat(self.worker_id)
            except Exception as exc:  # noqa: BLE001 - keep beating through hiccups
                log.warning("worker %s heartbeat failed: %s", self.worker_id, exc)

    def run(self) -> int:
        """Process tasks until stopped (or drained, when drain=True).
        Returns the number of completed executions."""
        self.queue.register_worker(self.worker_id)
        beat = threading.Thread(target=self._heartbeat_loop, daemon=True)
        beat.start()
        try:
            while not self.stop_event.is_set():
                task = self.queue.lease_next(self.worker_id)
                if task is None:
                    if self.drain:
                        return self.processed
                    time.sleep(self.poll_interval)
                    continue
                handler = self.handlers.get(task.kind)
                if handler is None:
                    outcome = OUTCOME_FAILED
                    log.error("no handler for task kind %r", task.kind)
                else:
                    try:
                        outcome = handler(task)
                    except Exception:  # noqa: BLE001 - handler faults become retries
                        log.exception("handler for %s raised", task.task_id)
                        outcome = OUTCOME_FAILED
                try:
                    self.queue.report_result(self.worker_id, task.task_id, outcome)
                    self.processed += 1
                except StaleLeaseError:
                    # Our lease expired mid-execution; the reaper owns the task now.
                    log.warning("stale lease on %s, result discarded", task.task_id)
        finally:
            self.stop_event.set()
        return self.processed

    def stop(self) -> None:
        self.stop_event.set()


def run_worker(queue, worker_id: str, handlers: dict[str, Handler], **kwargs) -> int:
    return WorkerRuntime(queue, worker_id, handlers, **kwargs).run()


# ---------------------------------------------------------------------------
# Backend supervision
# ---------------------------------------------------------------------------

@dataclass
class RestartAction:
    worker_id: str
    reason: str = "unhealthy"


def supervise_workers(
    worker_ids: list[str],
    probe: Callable[[str], bool],
) -> list[RestartAction]:
    """Issue restart actions for workers whose backend probe reports
    unhealthy. Leased tasks are left alone: reclamation belongs to the
    reaper, so a backend restarted within the heartbeat window loses
    nothing."""
    actions = []
    for worker_id in worker_ids:
        try:
            healthy = probe(worker_id)
        except Exception as exc:  # noqa: BLE001 - probe failure is not evidence
            log.warning("health probe failed for %s: %s", worker_id, exc)
            continue
        if not healthy:
            actions.append(RestartAction(worker_id=worker_id))
    return actions
