"""Distributed producer-consumer task orchestration: lease-based priority
queue, heartbeat monitoring, orphan reclamation, bounded retries, worker
runtime, backend supervision, and a deterministic fault simulator."""

from .queue import (
    DONE,
    FAILED_PERMANENT,
    LEASED,
    OUTCOME_DONE,
    OUTCOME_FAILED,
    QUEUED,
    DuplicateTaskError,
    Lease,
    StaleLeaseError,
    TaskQueue,
    TaskRecord,
    UnknownTaskError,
    UnknownWorkerError,
    WorkerRecord,
)
from .protocol import QueueClient, QueueServer, handle_request
from .sim import SimConfig, SimResult, run_simulation
from .worker import RestartAction, WorkerRuntime, run_worker, supervise_workers

__all__ = [
    "DONE",
    "FAILED_PERMANENT",
    "LEASED",
    "OUTCOME_DONE",
    "OUTCOME_FAILED",
    "QUEUED",
    "DuplicateTaskError",
    "Lease",
    "StaleLeaseError",
    "TaskQueue",
    "TaskRecord",
    "UnknownTaskError",
    "UnknownWorkerError",
    "WorkerRecord",
    "QueueClient",
    "QueueServer",
    "handle_request",
    "SimConfig",
    "SimResult",
    "run_simulation",
    "RestartAction",
    "WorkerRuntime",
    "run_worker",
    "supervise_workers",
]
