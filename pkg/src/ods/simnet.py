"""Deterministic analytic network simulator.

Maps (link, background load, dataset, parameters) onto throughput and
transfer duration. The model is deliberately closed-form: aggregate rate is
concave in the total stream count ``cc*p`` (window-limited, then fair-share
limited, then penalised past an overload threshold) and command overhead
shrinks with pipelining depth until data time dominates.

Scenario files (``ods simulate``) are JSON objects::

    {
      "link":    {"capacity": 1000, "rtt": 100, "command_rtt": 25,
                  "buffer": 125000, "overload_threshold": 64,
                  "loss_coeff": 0.05, "setup_cost": 0,
                  "src": "site-a", "dst": "site-b"},
      "load":    {"segments": [[0, 10], [30, 40]], "regime": "peak"},
      "dataset": {"files": [["f0", 1000000000]]}
                 | {"groups": [{"count": 200, "size": 100000}, ...]},
      "params":  {"cc": 1, "p": 1, "pp": 1},
      "chunk_size": 67108864
    }

``load``, ``params`` and ``chunk_size`` are optional.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .params import ParamVector
from .records import TransferLogRecord

F_SETUP = 3  # open, stat, commit
DEFAULT_CHUNK = 4 * 1024 * 1024
NOISE_EPS = 0.02
LOG_EPOCH_MS = 1_500_000_000_000


@dataclass(frozen=True)
class LinkModel:
    capacity: float                 # Mbps
    rtt: float                      # ms
    buffer: float                   # bytes, per-stream window
    command_rtt: float = 0.0        # ms
    overload_threshold: int = 64    # streams
    loss_coeff: float = 0.0
    setup_cost: float = 0.0         # ms, per slot connection setup
    src: str = "src"
    dst: str = "dst"

    def __post_init__(self):
        bad = []
        if not self.capacity > 0:
            bad.append("capacity")
        if not self.rtt > 0:
            bad.append("rtt")
        if not self.command_rtt >= 0:
            bad.append("command_rtt")
        if not self.buffer > 0:
            bad.append("buffer")
        if not self.overload_threshold >= 1:
            bad.append("overload_threshold")
        if not self.loss_coeff >= 0:
            bad.append("loss_coeff")
        if not self.setup_cost >= 0:
            bad.append("setup_cost")
        if bad:
            raise ValidationError(f"invalid link fields: {', '.join(bad)}", fields=bad)

    @property
    def window_limit(self) -> float:
        """Per-stream ceiling in Mbps imposed by buffer / rtt."""
        return self.buffer * 8 / (self.rtt / 1000) / 1e6

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "LinkModel":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad link: {exc}", fields=["link"]) from None


@dataclass(frozen=True)
class LoadProfile:
    """Piecewise-constant background flow count, ``segments`` = ((start_s, flows), ...)."""

    segments: tuple = ((0.0, 0),)
    regime: str = "offpeak"

    def __post_init__(self):
        segs = tuple((float(t), int(n)) for t, n in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs or segs[0][0] != 0:
            raise ValidationError("load profile must start at t=0", fields=["segments"])
        if any(b[0] <= a[0] for a, b in zip(segs, segs[1:])):
            raise ValidationError("segment start times must strictly increase", fields=["segments"])
        if any(n < 0 for _, n in segs):
            raise ValidationError("background flows must be >= 0", fields=["segments"])

    @classmethod
    def constant(cls, flows: int, regime: str = "offpeak") -> "LoadProfile":
        return cls(((0.0, flows),), regime)

    @classmethod
    def step(cls, before: int, after: int, at: float, regime: str = "offpeak") -> "LoadProfile":
        return cls(((0.0, before), (at, after)), regime)

    def flows_at(self, t: float) -> int:
        flows = self.segments[0][1]
        for start, n in self.segments:
            if start > t:
                break
            flows = n
        return flows

    def shifted(self, t0: float) -> "LoadProfile":
        """The same profile seen from time ``t0`` onward, re-based to start at 0."""
        segs = [(0.0, self.flows_at(t0))]
        segs += [(s - t0, n) for s, n in self.segments if s > t0]
        return LoadProfile(tuple(segs), self.regime)

    def to_dict(self) -> dict:
        return {"segments": [list(s) for s in self.segments], "regime": self.regime}

    @classmethod
    def from_dict(cls, d: dict) -> "LoadProfile":
        return cls(tuple(tuple(s) for s in d.get("segments", [[0, 0]])), d.get("regime", "offpeak"))


@dataclass(frozen=True)
class Dataset:
    files: tuple  # ((file_id, size_bytes), ...)

    def __post_init__(self):
        files = tuple((str(f), int(s)) for f, s in self.files)
        object.__setattr__(self, "files", files)
        ids = [f for f, _ in files]
        if len(set(ids)) != len(ids):
            raise ValidationError("file ids must be unique", fields=["files"])
        if any(s < 0 for _, s in files):
            raise ValidationError("file sizes must be >= 0", fields=["files"])

    @classmethod
    def uniform(cls, count: int, size: int, prefix: str = "f") -> "Dataset":
        return cls(tuple((f"{prefix}{i}", size) for i in range(count)))

    def __add__(self, other: "Dataset") -> "Dataset":
        return Dataset(self.files + other.files)

    def __len__(self) -> int:
        return len(self.files)

    @property
    def total_size(self) -> int:
        return sum(s for _, s in self.files)

    @property
    def avg_file_size(self) -> float:
        return self.total_size / len(self.files) if self.files else 0.0

    def to_dict(self) -> dict:
        return {"files": [list(f) for f in self.files]}

    @classmethod
    def from_dict(cls, d: dict) -> "Dataset":
        if "files" in d:
            return cls(tuple(tuple(f) for f in d["files"]))
        ds = Dataset(())
        for gi, g in enumerate(d.get("groups", [])):
            ds = ds + cls.uniform(int(g["count"]), int(g["size"]), prefix=g.get("prefix", f"g{gi}_"))
        return ds


@dataclass
class TransferOutcome:
    duration: float                     # s
    avg_throughput: float               # Mbps
    total_bytes: int
    per_file_times: list = field(default_factory=list)   # (file_id, start_s, end_s)
    params_used: list = field(default_factory=list)      # (t_s, ParamVector)
    file_status: dict = field(default_factory=dict)      # relay only: file_id -> "done" | "failed: ..."

    def to_dict(self) -> dict:
        return {
            "duration": self.duration,
            "avg_throughput": self.avg_throughput,
            "total_bytes": self.total_bytes,
            "per_file_times": [list(x) for x in self.per_file_times],
            "params_used": [[t, pv.to_dict()] for t, pv in self.params_used],
            "file_status": dict(self.file_status),
        }


def effective_throughput(link: LinkModel, params: ParamVector, background_flows: int = 0) -> float:
    """Steady-state aggregate rate in Mbps for ``cc*p`` streams sharing ``link``."""
    if not isinstance(params, ParamVector):
        params = ParamVector(*params)
    if background_flows < 0:
        raise ValidationError("background_flows must be >= 0", fields=["background_flows"])
    s = params.cc * params.p
    fair_share = link.capacity / (s + background_flows)
    per_stream = min(link.window_limit, fair_share)
    if s <= link.overload_threshold:
        penalty = 1.0
    else:
        penalty = 1.0 / (1.0 + link.loss_coeff * (s - link.overload_threshold))
    return min(s * per_stream * penalty, link.capacity)


def file_commands(size: int, chunk_size: int) -> int:
    return F_SETUP + math.ceil(size / chunk_size)


def command_time(size: int, chunk_size: int, pp: int, command_rtt_ms: float) -> float:
    return math.ceil(file_commands(size, chunk_size) / pp) * command_rtt_ms / 1000


def steady_throughput(
    link: LinkModel,
    params: ParamVector,
    background_flows: int,
    avg_file_size: float,
    chunk_size: int = DEFAULT_CHUNK,
) -> float:
    """Long-run Mbps of a job whose ``cc`` slots stay busy with average-sized files.

    This is the limit of ``simulate_transfer`` as the file count grows (no
    tail imbalance across slots), used for sampling a running job.
    """
    if avg_file_size <= 0:
        return 0.0
    rate = effective_throughput(link, params, background_flows) / params.cc * 1e6
    per_file = (math.ceil((F_SETUP + math.ceil(avg_file_size / chunk_size)) / params.pp)
                * link.command_rtt / 1000 + avg_file_size * 8 / rate)
    return params.cc * avg_file_size * 8 / per_file / 1e6


def simulate_transfer(
    link: LinkModel,
    load: LoadProfile,
    dataset: Dataset,
    params: ParamVector,
    chunk_size: int = DEFAULT_CHUNK,
) -> TransferOutcome:
    """Closed-form schedule: round-robin over ``cc`` slots, files sequential per slot."""
    if chunk_size <= 0:
        raise ValidationError("chunk_size must be > 0", fields=["chunk_size"])
    if not dataset.files:
        raise ValidationError("dataset must be nonempty", fields=["dataset"])
    cc = params.cc
    n = len(dataset.files)
    sizes = np.fromiter((s for _, s in dataset.files), dtype=np.int64, count=n)
    cmds = F_SETUP + -(-sizes // chunk_size)
    cmd_s = -(-cmds // params.pp) * link.command_rtt / 1000
    starts = np.empty(n)
    ends = np.empty(n)
    setup = link.setup_cost / 1000
    if len(load.segments) == 1:
        # constant load: every file in every slot sees the same rate
        rate = effective_throughput(link, params, load.segments[0][1]) / cc * 1e6
        inc = cmd_s + sizes * 8 / rate
        for slot in range(min(cc, n)):
            idx = np.arange(slot, n, cc)
            t = np.cumsum(np.concatenate(([setup], inc[idx])))
            starts[idx] = t[:-1]
            ends[idx] = t[1:]
    else:
        for slot in range(min(cc, n)):
            t = setup
            for i in range(slot, n, cc):
                starts[i] = t
                rate = effective_throughput(link, params, load.flows_at(t)) / cc * 1e6
                t = t + (cmd_s[i] + sizes[i] * 8 / rate)
                ends[i] = t
    duration = float(ends.max())
    total = int(sizes.sum())
    avg = total * 8 / duration / 1e6 if duration > 0 else 0.0
    per_file = [(fid, float(s), float(e)) for (fid, _), s, e in zip(dataset.files, starts, ends)]
    return TransferOutcome(duration, avg, total, per_file, [(0.0, params)])


def generate_logs(
    links: Sequence[LinkModel],
    loads: Sequence[LoadProfile],
    datasets: Sequence[Dataset],
    param_grid: Sequence[ParamVector],
    seed: int = 0,
    eps: float = NOISE_EPS,
    chunk_size: int = DEFAULT_CHUNK,
) -> list[TransferLogRecord]:
    """One noisy record per (link, load, dataset, params) cell, reproducible for a given seed."""
    if not (links and loads and datasets and param_grid):
        raise ValidationError("generate_logs needs nonempty links, loads, datasets and param_grid")
    rng = np.random.default_rng(seed)
    out = []
    i = 0
    for link in links:
        for load in loads:
            for ds in datasets:
                for pv in param_grid:
                    th = simulate_transfer(link, load, ds, pv, chunk_size).avg_throughput
                    if eps:
                        th *= float(rng.uniform(1 - eps, 1 + eps))
                    out.append(TransferLogRecord(
                        src_host=link.src, dst_host=link.dst, rtt=link.rtt, bandwidth=link.capacity,
                        file_count=len(ds), avg_file_size=ds.avg_file_size, total_size=ds.total_size,
                        cc=pv.cc, p=pv.p, pp=pv.pp, observed_throughput=th,
                        timestamp=LOG_EPOCH_MS + 1000 * i, load_regime=load.regime,
                    ))
                    i += 1
    return out


@dataclass(frozen=True)
class Scenario:
    link: LinkModel
    load: LoadProfile
    dataset: Dataset
    params: ParamVector = ParamVector()
    chunk_size: int = DEFAULT_CHUNK

    def run(self) -> TransferOutcome:
        return simulate_transfer(self.link, self.load, self.dataset, self.params, self.chunk_size)

    def to_dict(self) -> dict:
        return {
            "link": self.link.to_dict(), "load": self.load.to_dict(),
            "dataset": self.dataset.to_dict(), "params": self.params.to_dict(),
            "chunk_size": self.chunk_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        missing = [k for k in ("link", "dataset") if k not in d]
        if missing:
            raise ValidationError(f"scenario missing {', '.join(missing)}", fields=missing)
        return cls(
            LinkModel.from_dict(d["link"]),
            LoadProfile.from_dict(d.get("load", {})),
            Dataset.from_dict(d["dataset"]),
            ParamVector.from_dict(d.get("params", {})),
            int(d.get("chunk_size", DEFAULT_CHUNK)),
        )

    @classmethod
    def from_file(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
