from __future__ import annotations

import os
import threading
from pathlib import Path

from ..records import IngestReport, TransferLogRecord, parse_any


class LogStore:
    """Append-only store of TransferLogRecords.

    Appends are serialized; ``snapshot()`` hands out an immutable tuple so
    readers never observe a half-applied batch. When ``path`` is set every
    accepted record is also appended to that JSONL file.
    """

    def __init__(self, records=(), path: str | os.PathLike | None = None):
        self._lock = threading.Lock()
        self._records: tuple = ()
        self._version = 0
        self.path = Path(path) if path else None
        if self.path and self.path.exists():
            report = parse_any(self.path.read_text(), "jsonl")
            self._records = tuple(report.records)
        if records:
            self.extend(records, persist=bool(self.path))

    def __len__(self) -> int:
        return len(self._records)

    @property
    def version(self) -> int:
        return self._version

    def snapshot(self) -> tuple:
        return self._records

    def extend(self, records, persist: bool = True) -> int:
        records = tuple(records)
        if not records:
            return 0
        with self._lock:
            if persist and self.path:
                with open(self.path, "a") as fh:
                    fh.writelines(r.to_json() + "\n" for r in records)
            self._records = self._records + records
            self._version += 1
        return len(records)

    def append(self, record: TransferLogRecord) -> None:
        self.extend((record,))

    def ingest_text(self, text: str, fmt: str | None = None, name: str = "") -> IngestReport:
        """Parse JSONL or CSV; valid rows are stored even when other rows fail."""
        report = parse_any(text, fmt, name)
        self.extend(report.records)
        return report

    def ingest_file(self, path) -> IngestReport:
        path = Path(path)
        return self.ingest_text(path.read_text(), name=path.name)
