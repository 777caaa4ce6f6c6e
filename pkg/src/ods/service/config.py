"""Service configuration: one INI file plus ``ODS_*`` environment overrides.

Example file::

    [ods]
    port = 7616
    data_dir = /var/lib/ods
    token = s3cret
    stream_cap = 256
    max_concurrent_jobs = 2
    policy = fifo
    peak_hours = 9-17

    [tuning]
    max_samples = 8
    sample_bytes = 16777216
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, fields, replace
from datetime import datetime
from pathlib import Path

from ..errors import ValidationError
from ..params import DEFAULT_STREAM_CAP

DEFAULT_PORT = 7616
ENV_PREFIX = "ODS_"

# option name -> (ini section, env var suffix)
_SOURCES = {
    "host": ("ods", "HOST"),
    "port": ("ods", "PORT"),
    "data_dir": ("ods", "DATA_DIR"),
    "token": ("ods", "TOKEN"),
    "stream_cap": ("ods", "STREAM_CAP"),
    "max_concurrent_jobs": ("ods", "MAX_JOBS"),
    "policy": ("ods", "POLICY"),
    "chunk_size": ("ods", "CHUNK_SIZE"),
    "peak_hours": ("ods", "PEAK_HOURS"),
    "tuning_samples": ("tuning", "TUNING_SAMPLES"),
    "tuning_sample_bytes": ("tuning", "TUNING_SAMPLE_BYTES"),
}
_INI_NAMES = {"tuning_samples": "max_samples", "tuning_sample_bytes": "sample_bytes"}


@dataclass(frozen=True)
class Config:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    data_dir: str = "~/.ods"
    token: str = ""                 # empty: no bearer auth
    stream_cap: int = DEFAULT_STREAM_CAP
    max_concurrent_jobs: int = 2
    policy: str = "fifo"
    chunk_size: int = 0             # 0: relay default
    peak_hours: str = ""            # "H1-H2" local hours counted as peak, e.g. "9-17"
    tuning_samples: int = 8
    tuning_sample_bytes: int = 16 * 1024 * 1024

    def __post_init__(self):
        bad = [n for n in ("port", "stream_cap", "max_concurrent_jobs", "tuning_samples",
                           "tuning_sample_bytes") if getattr(self, n) < (0 if n == "port" else 1)]
        if self.chunk_size < 0:
            bad.append("chunk_size")
        if self.policy not in ("fifo", "sjf", "fair"):
            bad.append("policy")
        if self.peak_hours:
            try:
                _hours(self.peak_hours)
            except ValueError:
                bad.append("peak_hours")
        if bad:
            raise ValidationError(f"invalid configuration: {', '.join(bad)}", fields=bad)

    @property
    def data_path(self) -> Path:
        return Path(os.path.expanduser(self.data_dir))

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def regime_at(self, when: datetime | None = None) -> str:
        """Load regime for wall-clock ``when``, from the configured peak window."""
        if not self.peak_hours:
            return "offpeak"
        lo, hi = _hours(self.peak_hours)
        h = (when or datetime.now()).hour
        inside = lo <= h < hi if lo <= hi else (h >= lo or h < hi)
        return "peak" if inside else "offpeak"

    @classmethod
    def load(cls, path=None, env=None, **overrides) -> "Config":
        """Defaults, then the INI file, then environment, then ``overrides``."""
        env = os.environ if env is None else env
        path = path or env.get(ENV_PREFIX + "CONFIG")
        values: dict = {}
        if path:
            cp = configparser.ConfigParser()
            if not cp.read(path):
                raise ValidationError(f"cannot read config file {path}", fields=["config"])
            for name, (section, _) in _SOURCES.items():
                key = _INI_NAMES.get(name, name)
                if cp.has_option(section, key):
                    values[name] = cp.get(section, key)
        for name, (_, suffix) in _SOURCES.items():
            if ENV_PREFIX + suffix in env:
                values[name] = env[ENV_PREFIX + suffix]
        values.update({k: v for k, v in overrides.items() if v is not None})
        types = {f.name: f.type for f in fields(cls)}
        kw, bad = {}, []
        for name, raw in values.items():
            try:
                kw[name] = int(raw) if types[name] in ("int", int) else str(raw)
            except (TypeError, ValueError):
                bad.append(name)
        if bad:
            raise ValidationError(f"invalid configuration: {', '.join(bad)}", fields=bad)
        return cls(**kw)

    def with_(self, **kw) -> "Config":
        return replace(self, **kw)


def _hours(text: str) -> tuple[int, int]:
    lo, hi = (int(x) for x in text.split("-"))
    if not (0 <= lo <= 23 and 0 <= hi <= 24):
        raise ValueError(text)
    return lo, hi
