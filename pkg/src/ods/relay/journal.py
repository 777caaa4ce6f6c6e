"""Append-only JSONL job journal. Field-by-field format: docs/journal.md.

The first line is a header ``{"v": 1, "type": "header", "job_id": ..., "created": ms}``.
Every following line is one event record. Records reach the kernel as they
are written; commit and parameter records are also fsync'd, so a power loss
can drop only range records since the last sync (those bytes are re-sent).
"""
from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import UnrecoverableJournalError, ValidationError
from ..params import ParamVector
from ..ranges import OverlapError, RangeSet

SCHEMA_VERSION = 1
RECORD_TYPES = ("header", "job", "file", "range", "commit", "file_failed", "params", "phase")


def now_ms() -> int:
    return int(time.time() * 1000)


class Journal:
    """Serialized writer for one job's journal file."""

    def __init__(self, path, job_id: str, fresh: bool):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        # line buffered: every record reaches the kernel as soon as it is written
        self._fh = open(self.path, "w" if fresh else "a", encoding="utf-8", buffering=1)
        self.closed = False
        if fresh:
            self.write({"type": "header", "v": SCHEMA_VERSION, "job_id": job_id, "created": now_ms()},
                       sync=True)

    def write(self, record: dict, sync: bool = False) -> None:
        line = json.dumps(record, separators=(",", ":"), sort_keys=True) + "\n"
        with self._lock:
            if self.closed:
                return
            self._fh.write(line)
            if sync:
                self._fh.flush()
                os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            if not self.closed:
                self._fh.flush()
                self._fh.close()
                self.closed = True

    def abandon(self) -> None:
        """Stop writing immediately, as a killed process would."""
        with self._lock:
            if not self.closed:
                self._fh.close()
                self.closed = True


@dataclass
class FileEntry:
    idx: int
    file_id: str
    src: str
    dst: str
    size: int
    transfer_id: str
    committed: RangeSet = field(default_factory=RangeSet)
    status: str = "pending"          # pending | done | failed
    crc: int | None = None
    error: str = ""

    @property
    def committed_bytes(self) -> int:
        return self.committed.total


@dataclass
class JournalState:
    job_id: str
    job: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)         # idx -> FileEntry
    params: list = field(default_factory=list)        # (t ms, ParamVector)
    phases: list = field(default_factory=list)        # (t ms, phase)
    torn_tail: bool = False

    @property
    def listed(self) -> bool:
        return any(p == "listed" for _, p in self.phases)

    @property
    def complete(self) -> bool:
        return self.listed and all(f.status != "pending" for f in self.files.values())

    @property
    def phase(self) -> str:
        return self.phases[-1][1] if self.phases else "new"

    @property
    def committed_bytes(self) -> int:
        return sum(f.committed_bytes for f in self.files.values())

    @property
    def last_params(self) -> ParamVector | None:
        return self.params[-1][1] if self.params else None


def replay(path) -> JournalState:
    """Rebuild job state from a journal.

    A torn final line (crash mid-write) is ignored. Any other malformed
    line, a record for an unknown file, or overlapping committed ranges
    raise UnrecoverableJournalError. Replay is pure, so repeating it is
    idempotent.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UnrecoverableJournalError(f"no journal at {path}", path=str(path)) from None
    lines = text.split("\n")
    terminated = lines[-1] == ""
    if terminated:
        lines.pop()
    torn = False
    records = []
    for i, line in enumerate(lines):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1 and not terminated:
                torn = True     # crash mid-write of the final record
                break
            raise UnrecoverableJournalError(f"{path}:{i + 1}: malformed journal line", line=i + 1) from None
    if not records or records[0].get("type") != "header":
        raise UnrecoverableJournalError(f"{path}: missing journal header")
    head = records[0]
    if head.get("v") != SCHEMA_VERSION:
        raise UnrecoverableJournalError(f"{path}: unsupported journal version {head.get('v')!r}")
    st = JournalState(job_id=head["job_id"], torn_tail=torn)
    for n, r in enumerate(records[1:], start=2):
        kind = r.get("type")
        try:
            if kind == "job":
                st.job = r["job"]
            elif kind == "file":
                st.files[r["idx"]] = FileEntry(r["idx"], r["file_id"], r["src"], r["dst"], r["size"],
                                               r["transfer_id"])
            elif kind == "range":
                f = st.files[r["idx"]]
                if r["end"] > f.size or r["start"] < 0:
                    raise UnrecoverableJournalError(f"{path}:{n}: range outside file {f.file_id}")
                f.committed.add(r["start"], r["end"], strict=True)
            elif kind == "commit":
                f = st.files[r["idx"]]
                f.status, f.crc = "done", r["crc"]
            elif kind == "file_failed":
                f = st.files[r["idx"]]
                f.status, f.error = "failed", r.get("error", "")
            elif kind == "params":
                st.params.append((r["t"], ParamVector.from_dict(r["params"])))
            elif kind == "phase":
                st.phases.append((r["t"], r["phase"]))
            else:
                raise UnrecoverableJournalError(f"{path}:{n}: unknown record type {kind!r}")
        except OverlapError:
            raise UnrecoverableJournalError(f"{path}:{n}: overlapping committed ranges", line=n) from None
        except (KeyError, TypeError, ValueError, ValidationError) as exc:
            raise UnrecoverableJournalError(f"{path}:{n}: bad {kind} record ({exc})", line=n) from None
    return st
