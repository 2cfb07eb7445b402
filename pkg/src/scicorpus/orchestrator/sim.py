"""Deterministic fault-injection simulator for the task queue.

A seeded schedule drives workers over virtual time with three fault kinds:
crashes (worker abandons its task, stops heartbeating, restarts later under
a fresh identity), freezes (worker goes completely silent past the
heartbeat timeout and then wakes up to report a stale result, exercising
lease fencing), and plain task failures (exercising retry bounds).

Every tick the harness checks the safety properties independently of the
queue's own bookkeeping:
  * a task is never granted while another grant for it is outstanding;
  * a lease is never granted while a strictly higher-priority task queues;
  * the reaper reclaims exactly the leases whose heartbeat age exceeds the
    timeout, never earlier;
and at the end of the run that every task ended done or failed_permanent.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .queue import (
    DONE,
    FAILED_PERMANENT,
    LEASED,
    OUTCOME_DONE,
    OUTCOME_FAILED,
    QUEUED,
    StaleLeaseError,
    TaskQueue,
)


@dataclass
class SimConfig:
    seed: int = 0
    n_tasks: int = 100
    n_workers: int = 3
    heartbeat_timeout: float = 60.0
    reap_period: float = 15.0
    max_attempts: int = 3
    crash_prob: float = 0.01
    max_crashes: int = 5
    freeze_prob: float = 0.004
    max_freezes: int = 2
    fail_prob: float = 0.03
    max_ticks: int = 200_000


@dataclass
class SimResult:
    done: int = 0
    failed_permanent: int = 0
    reclaimed: int = 0
    crashes: int = 0
    freezes: int = 0
    stale_rejections: int = 0
    ticks: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


class _SimWorker:
    __slots__ = ("name", "worker_id", "incarnation", "state", "task", "ticks_left",
                 "down_until", "frozen_until")

    def __init__(self, name: str):
        self.name = name
        self.incarnation = 0
        self.worker_id = f"{name}.0"
        self.state = "idle"  # idle | busy | crashed
        self.task = None
        self.ticks_left = 0
        self.down_until = 0.0
        self.frozen_until = 0.0

    def restart_identity(self) -> None:
        # A restarted process must not inherit the dead incarnation's leases.
        self.incarnation += 1
        self.worker_id = f"{self.name}.{self.incarnation}"


def run_simulation(cfg: SimConfig) -> SimResult:
    rng = random.Random(cfg.seed)
    result = SimResult()
    vtime = 0.0

    queue = TaskQueue(
        heartbeat_timeout=cfg.heartbeat_timeout,
        reap_period=cfg.reap_period,
        default_max_attempts=cfg.max_attempts,
        clock=lambda: vtime,
    )
    for i in range(cfg.n_tasks):
        queue.enqueue(task_id=f"t{i:04d}", kind="sim", priority=rng.randint(0, 9))

    workers = [_SimWorker(f"w{i}") for i in range(cfg.n_workers)]
    for w in workers:
        queue.register_worker(w.worker_id)

    # Independent view of outstanding grants; they must never overlap.
    lease_view: dict[str, str] = {}
    crashes = freezes = 0
    next_reap = cfg.reap_period

    def reap(now: float) -> None:
        # Oracle: exactly the leases with expired heartbeats get reclaimed.
        expected = {
            task_id
            for task_id, _worker, hb in queue.leased_snapshot()
            if now - hb > cfg.heartbeat_timeout
        }
        requeued = set(queue.reap_orphans(now))
        became_permanent = {
            t for t in expected - requeued if queue.get_task(t).status == FAILED_PERMANENT
        }
        if requeued | became_permanent != expected:
            result.violations.append(
                f"tick {now}: reaper touched {sorted(requeued | became_permanent)}, "
                f"expected {sorted(expected)}"
            )
        for task_id in expected:
            lease_view.pop(task_id, None)
        result.reclaimed += len(requeued)

    for tick in range(cfg.max_ticks):
        vtime = float(tick)
        result.ticks = tick
        if queue.all_terminal() and not lease_view:
            break

        if vtime >= next_reap:
            reap(vtime)
            next_reap += cfg.reap_period

        for w in workers:
            if w.state == "crashed":
                if vtime >= w.down_until:
                    w.restart_identity()
                    queue.register_worker(w.worker_id)
                    w.state = "idle"
                continue
            if vtime < w.frozen_until:
                continue  # fully frozen: no heartbeat, no progress

            if w.state == "busy" and crashes < cfg.max_crashes and rng.random() < cfg.crash_prob:
                crashes += 1
                w.state = "crashed"
                w.task = None  # work abandoned; the reaper will reclaim it
                w.down_until = vtime + rng.randint(10, int(cfg.heartbeat_timeout * 3))
                continue
            if w.state == "busy" and freezes < cfg.max_freezes and rng.random() < cfg.freeze_prob:
                freezes += 1
                w.frozen_until = vtime + cfg.heartbeat_timeout + rng.randint(int(cfg.reap_period) + 2, 40)
                continue

            queue.heartbeat(w.worker_id)

            if w.state == "idle":
                max_queued = queue.max_queued_priority()
                task = queue.lease_next(w.worker_id)
                if task is None:
                    continue
                if max_queued is not None and task.priority < max_queued:
                    result.violations.append(
                        f"tick {tick}: leased p={task.priority} while p={max_queued} queued"
                    )
                if task.task_id in lease_view:
                    result.violations.append(
                        f"tick {tick}: {task.task_id} granted to {w.worker_id} while held "
                        f"by {lease_view[task.task_id]}"
                    )
                lease_view[task.task_id] = w.worker_id
                w.task = task
                w.ticks_left = rng.randint(1, 5)
                w.state = "busy"
            else:
                w.ticks_left -= 1
                if w.ticks_left <= 0:
                    outcome = OUTCOME_FAILED if rng.random() < cfg.fail_prob else OUTCOME_DONE
                    try:
                        queue.report_result(w.worker_id, w.task.task_id, outcome)
                        if lease_view.get(w.task.task_id) == w.worker_id:
                            del lease_view[w.task.task_id]
                    except StaleLeaseError:
                        result.stale_rejections += 1
                    w.task = None
                    w.state = "idle"
    else:
        result.violations.append(f"simulation did not converge in {cfg.max_ticks} ticks")

    counts = queue.counts()
    result.done = counts[DONE]
    result.failed_permanent = counts[FAILED_PERMANENT]
    result.crashes = crashes
    result.freezes = freezes
    if counts[QUEUED] or counts[LEASED]:
        result.violations.append(
            f"non-terminal tasks at end: queued={counts[QUEUED]} leased={counts[LEASED]}"
        )
    if result.done + result.failed_permanent != cfg.n_tasks:
        result.violations.append(
            f"task conservation broken: {result.done}+{result.failed_permanent} != {cfg.n_tasks}"
        )
    return result
