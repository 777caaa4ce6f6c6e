"""Historical transfer log records and their JSONL / CSV encodings.

JSONL: one JSON object per line with exactly the keys in ``FIELDS``, plus an
optional ``"v"`` schema version (currently 1). CSV: the first row is a header
naming columns; column order is taken from the header, so any permutation of
``FIELDS`` is accepted. Unknown columns are ignored, missing ones are errors.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields
from typing import Iterable

from .errors import ValidationError
from .params import ParamVector

SCHEMA_VERSION = 1
REGIMES = ("peak", "offpeak")


@dataclass(frozen=True)
class TransferLogRecord:
    src_host: str
    dst_host: str
    rtt: float                  # ms
    bandwidth: float            # Mbps, nominal
    file_count: int
    avg_file_size: float        # bytes
    total_size: int             # bytes
    cc: int
    p: int
    pp: int
    observed_throughput: float  # Mbps
    timestamp: int              # epoch ms
    load_regime: str

    def __post_init__(self):
        bad = []
        if not (self.observed_throughput >= 0):
            bad.append("observed_throughput")
        for name in ("cc", "p", "pp"):
            if getattr(self, name) < 1:
                bad.append(name)
        if self.load_regime not in REGIMES:
            bad.append("load_regime")
        if not (self.rtt > 0):
            bad.append("rtt")
        if not (self.bandwidth > 0):
            bad.append("bandwidth")
        if bad:
            raise ValidationError(f"invalid log record fields: {', '.join(bad)}", fields=bad)

    @property
    def params(self) -> ParamVector:
        return ParamVector(self.cc, self.p, self.pp)

    def context_key(self) -> tuple:
        """Everything except the tunables and the measurement."""
        return (self.src_host, self.dst_host, self.rtt, self.bandwidth,
                self.avg_file_size, self.total_size, self.load_regime)

    def to_json(self) -> str:
        d = {"v": SCHEMA_VERSION}
        d.update(asdict(self))
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_mapping(cls, m) -> "TransferLogRecord":
        missing = [f for f in FIELDS if f not in m or m[f] in (None, "")]
        if missing:
            raise ValidationError(f"missing fields: {', '.join(missing)}", fields=missing)
        v = m.get("v", SCHEMA_VERSION)
        if int(v) != SCHEMA_VERSION:
            raise ValidationError(f"unsupported record schema version {v}", fields=["v"])
        kw = {}
        bad = []
        for f in fields(cls):
            try:
                kw[f.name] = _CASTS[f.name](m[f.name])
            except (TypeError, ValueError):
                bad.append(f.name)
        if bad:
            raise ValidationError(f"malformed fields: {', '.join(bad)}", fields=bad)
        return cls(**kw)


FIELDS = tuple(f.name for f in fields(TransferLogRecord))
_CASTS = {
    "src_host": str, "dst_host": str, "rtt": float, "bandwidth": float,
    "file_count": int, "avg_file_size": float, "total_size": int,
    "cc": int, "p": int, "pp": int, "observed_throughput": float,
    "timestamp": int, "load_regime": str,
}


@dataclass
class IngestReport:
    records: list
    errors: list  # (row number, message); rows are 1-based data rows, header excluded

    @property
    def ok(self) -> bool:
        return not self.errors


def dumps_jsonl(records: Iterable[TransferLogRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def parse_jsonl(text: str) -> IngestReport:
    out, errors = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(TransferLogRecord.from_mapping(json.loads(line)))
        except json.JSONDecodeError as exc:
            errors.append((lineno, f"bad JSON: {exc.msg}"))
        except ValidationError as exc:
            errors.append((lineno, exc.message))
    return IngestReport(out, errors)


def dumps_csv(records: Iterable[TransferLogRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in records:
        w.writerow([getattr(r, f) for f in FIELDS])
    return buf.getvalue()


def parse_csv(text: str) -> IngestReport:
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [f for f in FIELDS if f not in header]
    if missing:
        return IngestReport([], [(0, f"header missing columns: {', '.join(missing)}")])
    out, errors = [], []
    for rowno, row in enumerate(reader, 1):
        if None in row:
            errors.append((rowno, "too many columns"))
            continue
        try:
            out.append(TransferLogRecord.from_mapping(row))
        except ValidationError as exc:
            errors.append((rowno, exc.message))
    return IngestReport(out, errors)


def parse_any(text: str, fmt: str | None = None, name: str = "") -> IngestReport:
    if fmt is None:
        fmt = "csv" if name.lower().endswith(".csv") else "jsonl"
    if fmt == "csv":
        return parse_csv(text)
    if fmt == "jsonl":
        return parse_jsonl(text)
    raise ValidationError(f"unknown log format {fmt!r}", fields=["format"])
