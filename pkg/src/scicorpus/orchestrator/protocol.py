"""Queue service protocol: newline-delimited JSON over TCP (version 1).

Request:  {"v": 1, "op": <op>, ...params}
Response: {"ok": true, ...result} | {"ok": false, "error": <code>, "message": str}

Ops and params:
  register   {worker_id}
  enqueue    {task_id, kind, payload_ref?, priority?, max_attempts?, payload?}
  lease      {worker_id}                  -> {task: {...} | null}
  heartbeat  {worker_id}
  report     {worker_id, task_id, outcome: "done"|"failed"} -> {status}
  reap       {}                           -> {requeued: [task_id]}
  stats      {}                           -> {stats: {...}}

Error codes: bad_request, duplicate_task, unknown_worker, unknown_task,
stale_lease, internal.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
import time

from .queue import (
    DuplicateTaskError,
    StaleLeaseError,
    TaskQueue,
    TaskRecord,
    UnknownTaskError,
    UnknownWorkerError,
)

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1


def handle_request(queue: TaskQueue, req: dict) -> dict:
    """Dispatch one protocol request against the queue; transport-agnostic."""
    try:
        if not isinstance(req, dict) or req.get("v") != PROTOCOL_VERSION:
            return {"ok": False, "error": "bad_request", "message": "unsupported protocol version"}
        op = req.get("op")
        if op == "register":
            queue.register_worker(req["worker_id"])
            return {"ok": True}
        if op == "enqueue":
            task_id = queue.enqueue(
                task_id=req["task_id"],
                kind=req["kind"],
                payload_ref=req.get("payload_ref", ""),
                priority=int(req.get("priority", 0)),
                max_attempts=req.get("max_attempts"),
                payload=req.get("payload"),
            )
            return {"ok": True, "task_id": task_id}
        if op == "lease":
            task = queue.lease_next(req["worker_id"])
            return {"ok": True, "task": task.to_record() if task else None}
        if op == "heartbeat":
            queue.heartbeat(req["worker_id"])
            return {"ok": True}
        if op == "report":
            status = queue.report_result(req["worker_id"], req["task_id"], req["outcome"])
            return {"ok": True, "status": status}
        if op == "reap":
            return {"ok": True, "requeued": queue.reap_orphans()}
        if op == "stats":
            return {"ok": True, "stats": queue.stats()}
        return {"ok": False, "error": "bad_request", "message": f"unknown op {op!r}"}
    except KeyError as exc:
        return {"ok": False, "error": "bad_request", "message": f"missing field {exc}"}
    except DuplicateTaskError as exc:
        return {"ok": False, "error": "duplicate_task", "message": str(exc)}
    except UnknownWorkerError as exc:
        return {"ok": False, "error": "unknown_worker", "message": str(exc)}
    except UnknownTaskError as exc:
        return {"ok": False, "error": "unknown_task", "message": str(exc)}
    except StaleLeaseError as exc:
        return {"ok": False, "error": "stale_lease", "message": str(exc)}
    except Exception as exc:  # noqa: BLE001 - protocol boundary
        log.exception("internal error handling %r", req.get("op"))
        return {"ok": False, "error": "internal", "message": str(exc)}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            line = self.rfile.readline()
            if not line:
                return
            try:
                req = json.loads(line)
            except json.JSONDecodeError:
                resp = {"ok": False, "error": "bad_request", "message": "invalid JSON"}
            else:
                resp = handle_request(self.server.queue, req)
            self.wfile.write(json.dumps(resp).encode("utf-8") + b"\n")
            self.wfile.flush()


class QueueServer:
    """Hosts a TaskQueue over TCP with a background reaper thread."""

    def __init__(self, queue: TaskQueue, host: str = "127.0.0.1", port: int = 0):
        self.queue = queue
        self._tcp = socketserver.ThreadingTCPServer((host, port), _Handler, bind_and_activate=True)
        self._tcp.daemon_threads = True
        self._tcp.queue = queue
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def address(self) -> tuple[str, int]:
        return self._tcp.server_address

    def start(self) -> None:
        serve = threading.Thread(target=self._tcp.serve_forever, daemon=True)
        serve.start()
        reaper = threading.Thread(target=self._reap_loop, daemon=True)
        reaper.start()
        self._threads = [serve, reaper]

    def _reap_loop(self) -> None:
        while not self._stop.wait(self.queue.reap_period):
            requeued = self.queue.reap_orphans()
            if requeued:
                log.info("reaper requeued %d orphaned tasks", len(requeued))

    def stop(self) -> None:
        self._stop.set()
        self._tcp.shutdown()
        self._tcp.server_close()


class QueueClient:
    """Protocol client with the same method surface as TaskQueue, so worker
    code runs unchanged against a local queue or a remote server. Lost
    connections are retried with backoff."""

    def __init__(self, host: str, port: int, connect_retries: int = 5, backoff: float = 0.2):
        self.host = host
        self.port = port
        self.connect_retries = connect_retries
        self.backoff = backoff
        self._sock: socket.socket | None = None
        self._file = None
        self._lock = threading.Lock()

    def _connect(self) -> None:
        self._sock = socket.create_connection((self.host, self.port), timeout=30)
        self._file = self._sock.makefile("rwb")

    def close(self) -> None:
        with self._lock:
            if self._sock is not None:
                try:
                    self._sock.close()
                finally:
                    self._sock = None
                    self._file = None

    def _roundtrip(self, req: dict) -> dict:
        req = {"v": PROTOCOL_VERSION, **req}
        payload = json.dumps(req).encode("utf-8") + b"\n"
        last_exc: Exception | None = None
        with self._lock:
            for attempt in range(self.connect_retries):
                try:
                    if self._file is None:
                        self._connect()
                    self._file.write(payload)
                    self._file.flush()
                    line = self._file.readline()
                    if not line:
                        raise ConnectionError("server closed connection")
                    return json.loads(line)
                except (OSError, ConnectionError, json.JSONDecodeError) as exc:
                    last_exc = exc
                    self._sock = None
                    self._file = None
                    time.sleep(self.backoff * (2**attempt))
        raise ConnectionError(f"queue server unreachable: {last_exc}")

    @staticmethod
    def _check(resp: dict) -> dict:
        if not resp.get("ok"):
            error = resp.get("error", "internal")
            message = resp.get("message", "")
            exc_type = {
                "duplicate_task": DuplicateTaskError,
                "unknown_worker": UnknownWorkerError,
                "unknown_task": UnknownTaskError,
                "stale_lease": StaleLeaseError,
            }.get(error, RuntimeError)
            raise exc_type(message)
        return resp

    def register_worker(self, worker_id: str) -> None:
        self._check(self._roundtrip({"op": "register", "worker_id": worker_id}))

    def enqueue(self, task_id, kind, payload_ref="", priority=0, max_attempts=None, payload=None):
        resp = self._check(
            self._roundtrip(
                {
                    "op": "enqueue",
                    "task_id": task_id,
                    "kind": kind,
                    "payload_ref": payload_ref,
                    "priority": priority,
                    "max_attempts": max_attempts,
                    "payload": payload,
                }
            )
        )
        return resp["task_id"]

    def lease_next(self, worker_id: str):
        resp = self._check(self._roundtrip({"op": "lease", "worker_id": worker_id}))
        task = resp["task"]
        return TaskRecord.from_record(task) if task else None

    def heartbeat(self, worker_id: str) -> None:
        self._check(self._roundtrip({"op": "heartbeat", "worker_id": worker_id}))

    def report_result(self, worker_id: str, task_id: str, outcome: str) -> str:
        resp = self._check(
            self._roundtrip(
                {"op": "report", "worker_id": worker_id, "task_id": task_id, "outcome": outcome}
            )
        )
        return resp["status"]

    def reap_orphans(self) -> list[str]:
        return self._check(self._roundtrip({"op": "reap"}))["requeued"]

    def stats(self) -> dict:
        return self._check(self._roundtrip({"op": "stats"}))["stats"]
