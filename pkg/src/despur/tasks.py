"""Single-worker FIFO job queue with status, progress, and cancellation.

Jobs mutate shared model and cache state, so serializing them is the
correctness mechanism: at most one job runs at any instant. Cancellation is
cooperative; executors poll at safe boundaries (between batches, between test
samples) so no torn file is ever left behind. Every status transition is
appended to a JSON-lines log; on restart, jobs that were mid-flight are
replayed as failed ("interrupted").
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import InvalidPayload, JobCancelled, QueueFull, UnknownJobId

KINDS = ("train", "influence", "predict")
TERMINAL_STATUSES = ("done", "failed", "cancelled")
ALLOWED_TRANSITIONS = {
    "queued": {"running", "cancelled"},
    "running": {"done", "failed", "cancelled"},
    "done": set(),
    "failed": set(),
    "cancelled": set(),
}


@dataclass
class TaskRecord:
    job_id: str
    kind: str
    status: str
    progress: float = 0.0
    message: str = ""
    submitted_at: float = 0.0
    started_at: float | None = None
    finished_at: float | None = None
    payload: dict = field(default_factory=dict)
    result_ref: str | None = None

    def snapshot(self) -> "TaskRecord":
        return TaskRecord(**{**self.__dict__, "payload": dict(self.payload)})

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "kind": self.kind,
            "status": self.status,
            "progress": self.progress,
            "message": self.message,
            "submitted_at": self.submitted_at,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "payload": self.payload,
            "result_ref": self.result_ref,
        }

    @staticmethod
    def from_dict(data: dict) -> "TaskRecord":
        return TaskRecord(
            job_id=str(data["job_id"]),
            kind=str(data["kind"]),
            status=str(data["status"]),
            progress=float(data.get("progress", 0.0)),
            message=str(data.get("message", "")),
            submitted_at=float(data.get("submitted_at", 0.0)),
            started_at=data.get("started_at"),
            finished_at=data.get("finished_at"),
            payload=dict(data.get("payload", {})),
            result_ref=data.get("result_ref"),
        )


class TaskContext:
    """Handed to executors: progress reporting plus the cancellation flag."""

    def __init__(self, center: "TaskCenter", job_id: str):
        self._center = center
        self.job_id = job_id

    def progress(self, fraction: float, message: str | None = None) -> None:
        self._center._update_progress(self.job_id, fraction, message)

    def is_cancelled(self) -> bool:
        return self._center._cancel_requested(self.job_id)

    def checkpoint(self) -> None:
        """Raise JobCancelled if a cancel request is pending."""
        if self.is_cancelled():
            raise JobCancelled()


Executor = Callable[[dict, TaskContext], str | None]
Validator = Callable[[dict], None]


class TaskCenter:
    QUEUE_LIMIT = 100

    def __init__(self, log_path, transition_listener=None):
        self.log_path = Path(log_path)
        self._lock = threading.Condition()
        self._records: dict[str, TaskRecord] = {}
        self._cancel_flags: set[str] = set()
        self._executors: dict[str, tuple[Validator, Executor]] = {}
        self._counter = 0
        self._worker: threading.Thread | None = None
        self._stopping = False
        self._transition_listener = transition_listener
        self._replay_log()

    # --- setup ---

    def register_executor(self, kind: str, validator: Validator, executor: Executor) -> None:
        self._executors[kind] = (validator, executor)

    def start(self) -> None:
        if self._worker is not None:
            return
        self._stopping = False
        self._worker = threading.Thread(target=self._worker_loop, daemon=True,
                                        name="despur-task-worker")
        self._worker.start()

    def stop(self, timeout: float = 10.0) -> None:
        with self._lock:
            self._stopping = True
            self._lock.notify_all()
        if self._worker is not None:
            self._worker.join(timeout=timeout)
            self._worker = None

    def _replay_log(self) -> None:
        if not self.log_path.is_file():
            return
        last: dict[str, TaskRecord] = {}
        for line in self.log_path.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                rec = TaskRecord.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError):
                continue  # torn trailing line after a crash
            last[rec.job_id] = rec
        now = time.time()
        for rec in last.values():
            if rec.status not in TERMINAL_STATUSES:
                rec.status = "failed"
                rec.message = "interrupted"
                rec.finished_at = now
                self._append_log(rec)
            self._records[rec.job_id] = rec
            try:
                num = int(rec.job_id.rsplit("-", 1)[1])
            except (IndexError, ValueError):
                num = 0
            self._counter = max(self._counter, num)

    def _append_log(self, record: TaskRecord) -> None:
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a") as fh:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    # --- public API ---

    def submit(self, kind: str, payload: dict) -> str:
        if kind not in self._executors:
            raise InvalidPayload(f"unknown task kind {kind!r}")
        validator, _ = self._executors[kind]
        validator(payload)
        with self._lock:
            queued = sum(1 for r in self._records.values() if r.status == "queued")
            if queued >= self.QUEUE_LIMIT:
                raise QueueFull(f"task queue is at its limit of {self.QUEUE_LIMIT}")
            self._counter += 1
            job_id = f"job-{self._counter:06d}"
            record = TaskRecord(
                job_id=job_id, kind=kind, status="queued",
                submitted_at=time.time(), payload=dict(payload),
            )
            self._records[job_id] = record
            self._append_log(record)
            self._notify_listener(record)
            self._lock.notify_all()
        return job_id

    def get_status(self, job_id: str) -> TaskRecord:
        with self._lock:
            record = self._records.get(job_id)
            if record is None:
                raise UnknownJobId(f"no job named {job_id!r}")
            return record.snapshot()

    def list_tasks(self, status: str | None = None) -> list[TaskRecord]:
        with self._lock:
            records = [r.snapshot() for r in self._records.values()
                       if status is None or r.status == status]
        records.sort(key=lambda r: (r.submitted_at, r.job_id), reverse=True)
        return records

    def cancel(self, job_id: str) -> TaskRecord:
        """Cancel a queued job immediately; flag a running one; ack terminal ones."""
        with self._lock:
            record = self._records.get(job_id)
            if record is None:
                raise UnknownJobId(f"no job named {job_id!r}")
            if record.status == "queued":
                self._transition(record, "cancelled", message="cancelled before start")
            elif record.status == "running":
                self._cancel_flags.add(job_id)
            return record.snapshot()

    def wait(self, job_id: str, timeout: float = 60.0) -> TaskRecord:
        """Block until the job reaches a terminal status (test/CLI helper)."""
        deadline = time.time() + timeout
        with self._lock:
            while True:
                record = self._records.get(job_id)
                if record is None:
                    raise UnknownJobId(f"no job named {job_id!r}")
                if record.status in TERMINAL_STATUSES:
                    return record.snapshot()
                remaining = deadline - time.time()
                if remaining <= 0:
                    return record.snapshot()
                self._lock.wait(timeout=min(remaining, 0.5))

    # --- worker internals ---

    def _transition(self, record: TaskRecord, status: str, message: str | None = None,
                    result_ref: str | None = None) -> None:
        assert status in ALLOWED_TRANSITIONS[record.status], \
            f"illegal transition {record.status} -> {status}"
        record.status = status
        if message is not None:
            record.message = message
        if result_ref is not None:
            record.result_ref = result_ref
        now = time.time()
        if status == "running":
            record.started_at = now
        if status in TERMINAL_STATUSES:
            record.finished_at = now
            if status == "done":
                record.progress = 1.0
        self._append_log(record)
        self._notify_listener(record)
        self._lock.notify_all()

    def _notify_listener(self, record: TaskRecord) -> None:
        if self._transition_listener is not None:
            self._transition_listener(record.snapshot())

    def _update_progress(self, job_id: str, fraction: float, message: str | None) -> None:
        with self._lock:
            record = self._records.get(job_id)
            if record is None or record.status != "running":
                return
            record.progress = min(1.0, max(record.progress, float(fraction)))
            if message is not None:
                record.message = message

    def _cancel_requested(self, job_id: str) -> bool:
        with self._lock:
            return job_id in self._cancel_flags

    def _next_queued(self) -> TaskRecord | None:
        queued = [r for r in self._records.values() if r.status == "queued"]
        if not queued:
            return None
        return min(queued, key=lambda r: r.job_id)

    def _worker_loop(self) -> None:
        while True:
            with self._lock:
                record = self._next_queued()
                while record is None and not self._stopping:
                    self._lock.wait(timeout=0.5)
                    record = self._next_queued()
                if self._stopping:
                    return
                self._transition(record, "running", message="")
                _, executor = self._executors[record.kind]
                payload = dict(record.payload)
                job_id = record.job_id
            ctx = TaskContext(self, job_id)
            try:
                result_ref = executor(payload, ctx)
            except JobCancelled as exc:
                with self._lock:
                    self._transition(self._records[job_id], "cancelled",
                                     message="cancelled", result_ref=exc.result_ref)
            except Exception as exc:  # noqa: BLE001 - any executor fault fails the job
                with self._lock:
                    self._transition(self._records[job_id], "failed",
                                     message=f"{type(exc).__name__}: {exc}")
            else:
                # a cancel flag the executor never observed does not undo finished work
                with self._lock:
                    self._transition(self._records[job_id], "done", result_ref=result_ref)
            finally:
                with self._lock:
                    self._cancel_flags.discard(job_id)
