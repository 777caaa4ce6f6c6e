"""Job queue with admission control and a journaled state machine.

States: queued -> running -> done | failed, and running <-> paused. A paused
job keeps its slot, so admissions only happen while running + paused is
below ``max_concurrent_jobs``.
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .errors import NotFoundError, StateMachineError, ValidationError
from .relay.journal import now_ms

POLICIES = ("fifo", "sjf", "fair")
STATES = ("queued", "running", "paused", "done", "failed")
TERMINAL = ("done", "failed")
LEGAL = {
    ("queued", "running"),
    ("running", "done"),
    ("running", "failed"),
    ("running", "paused"),
    ("paused", "running"),
}
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class QueueEntry:
    job_id: str
    owner: str
    priority: int = 0
    predicted_duration: float | None = None   # s
    state: str = "queued"
    seq: int = 0                              # admission order
    job: dict = field(default_factory=dict, compare=False, repr=False)
    updated: int = 0                          # epoch ms of last transition

    def to_dict(self) -> dict:
        return {"job_id": self.job_id, "owner": self.owner, "priority": self.priority,
                "predicted_duration": self.predicted_duration, "state": self.state, "seq": self.seq,
                "updated": self.updated}


@dataclass(frozen=True)
class QueueSnapshot:
    entries: tuple = ()                        # QueueEntry, in seq order
    served: tuple = ()                         # sorted (owner, jobs started) pairs

    def by_state(self, *states) -> list[QueueEntry]:
        return [e for e in self.entries if e.state in states]

    def get(self, job_id: str) -> QueueEntry | None:
        return next((e for e in self.entries if e.job_id == job_id), None)


def choose(snapshot: QueueSnapshot, policy: str) -> str | None:
    """The next queued job under ``policy``; a pure function of its inputs."""
    queued = snapshot.by_state("queued")
    if not queued:
        return None
    if policy == "fifo":
        return min(queued, key=lambda e: e.seq).job_id
    if policy == "sjf":
        # unpredicted jobs after all predicted ones, fifo among equals
        return min(queued, key=lambda e: (e.predicted_duration is None,
                                          e.predicted_duration or 0.0, e.seq)).job_id
    if policy == "fair":
        served = dict(snapshot.served)
        oldest: dict[str, QueueEntry] = {}
        for e in queued:
            if e.owner not in oldest or e.seq < oldest[e.owner].seq:
                oldest[e.owner] = e
        owner = min(oldest, key=lambda o: (served.get(o, 0), oldest[o].seq))
        return oldest[owner].job_id
    raise ValidationError(f"unknown policy {policy!r}; expected one of {POLICIES}", fields=["policy"])


class Scheduler:
    """Single authority for queue state; every transition is journaled first."""

    def __init__(self, journal_path=None, max_concurrent_jobs: int = 2, policy: str = "fifo",
                 on_transition: Callable[[QueueEntry, str], None] | None = None):
        if policy not in POLICIES:
            raise ValidationError(f"unknown policy {policy!r}", fields=["policy"])
        if max_concurrent_jobs < 1:
            raise ValidationError("max_concurrent_jobs must be >= 1", fields=["max_concurrent_jobs"])
        self.max_concurrent_jobs = max_concurrent_jobs
        self.policy = policy
        self.on_transition = on_transition
        self._lock = threading.RLock()
        self._entries: dict[str, QueueEntry] = {}
        self._served: dict[str, int] = {}
        self._seq = 0
        self._snapshot = QueueSnapshot()
        self.path = Path(journal_path) if journal_path else None
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.path.exists() and self.path.stat().st_size:
                self._replay()
            self._fh = open(self.path, "a", encoding="utf-8", buffering=1)
            if self._fh.tell() == 0:
                self._write({"type": "header", "v": SCHEMA_VERSION, "kind": "scheduler"})
        self._refresh()

    # ---- persistence

    def _write(self, rec: dict) -> None:
        if self._fh is None:
            return
        self._fh.write(json.dumps(rec, separators=(",", ":"), sort_keys=True) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def _replay(self) -> None:
        lines = self.path.read_text(encoding="utf-8").split("\n")
        for i, line in enumerate(lines):
            if not line:
                continue
            try:
                r = json.loads(line)
            except json.JSONDecodeError:
                if i >= len(lines) - 2:
                    # torn final record: cut it so later appends start on a fresh line
                    good = "\n".join(lines[:i])
                    self.path.write_text(good + "\n" if good else "", encoding="utf-8")
                    break
                raise
            kind = r.get("type")
            if kind == "submit":
                e = QueueEntry(r["job_id"], r["owner"], r.get("priority", 0), r.get("predicted"),
                               "queued", r["seq"], r.get("job", {}), r.get("t", 0))
                self._entries[e.job_id] = e
                self._seq = max(self._seq, e.seq)
            elif kind == "state":
                e = self._entries[r["job_id"]]
                self._entries[e.job_id] = replace(e, state=r["state"], updated=r.get("t", 0))
                if r["state"] == "running" and e.state == "queued":
                    self._served[e.owner] = self._served.get(e.owner, 0) + 1

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    # ---- queries

    def _refresh(self) -> None:
        self._snapshot = QueueSnapshot(tuple(sorted(self._entries.values(), key=lambda e: e.seq)),
                                       tuple(sorted(self._served.items())))

    def snapshot(self) -> QueueSnapshot:
        return self._snapshot

    def get(self, job_id: str) -> QueueEntry:
        e = self._snapshot.get(job_id)
        if e is None:
            raise NotFoundError(f"unknown job {job_id}", job_id=job_id)
        return e

    def next(self, policy: str | None = None) -> str | None:
        return choose(self._snapshot, policy or self.policy)

    @property
    def occupied(self) -> int:
        return len(self._snapshot.by_state("running", "paused"))

    # ---- mutations

    def submit(self, job, predicted_duration: float | None = None, priority: int = 0) -> str:
        """Enqueue ``job`` (a TransferJob or its dict); durable before this returns."""
        d = job.to_dict() if hasattr(job, "to_dict") else dict(job)
        missing = [k for k in ("job_id", "src", "dst", "selection") if not d.get(k)]
        if missing:
            raise ValidationError(f"job is missing {', '.join(missing)}", fields=missing)
        with self._lock:
            if d["job_id"] in self._entries:
                raise ValidationError(f"job id {d['job_id']} already exists", fields=["job_id"])
            self._seq += 1
            e = QueueEntry(d["job_id"], d.get("owner", "anonymous"), priority, predicted_duration,
                           "queued", self._seq, d, now_ms())
            self._write({"type": "submit", "job_id": e.job_id, "owner": e.owner, "priority": priority,
                         "predicted": predicted_duration, "seq": e.seq, "job": d, "t": e.updated})
            self._entries[e.job_id] = e
            self._refresh()
        self.admit()
        return e.job_id

    def set_state(self, job_id: str, new_state: str) -> QueueEntry:
        with self._lock:
            e = self._entries.get(job_id)
            if e is None:
                raise NotFoundError(f"unknown job {job_id}", job_id=job_id)
            if (e.state, new_state) not in LEGAL:
                raise StateMachineError(f"illegal transition {e.state} -> {new_state} for job {job_id}",
                                        job_id=job_id, state=e.state, requested=new_state)
            if e.state == "queued" and self.occupied >= self.max_concurrent_jobs:
                raise StateMachineError("no free slot to start another job", job_id=job_id)
            t = now_ms()
            self._write({"type": "state", "job_id": job_id, "state": new_state, "t": t})
            old = e.state
            e = replace(e, state=new_state, updated=t)
            self._entries[job_id] = e
            if old == "queued":
                self._served[e.owner] = self._served.get(e.owner, 0) + 1
            self._refresh()
            assert len(self._snapshot.by_state("running")) <= self.max_concurrent_jobs
        if self.on_transition is not None:
            self.on_transition(e, old)
        if new_state in TERMINAL:
            self.admit()
        return e

    def admit(self) -> list[str]:
        """Start queued jobs while slots are free; returns the ids started."""
        started = []
        while True:
            with self._lock:
                if self.occupied >= self.max_concurrent_jobs:
                    break
                job_id = self.next()
                if job_id is None:
                    break
            try:
                self.set_state(job_id, "running")
            except StateMachineError:
                continue  # another thread took the slot or the job first
            started.append(job_id)
        return started
