"""Sampling-based online tuning of a running job.

A tunable job is anything with ``sample(params, nbytes) -> Mbps`` (move
``nbytes`` of the job's own data at ``params`` and report the measured rate)
and ``apply_params(params)``. ``SimnetJob`` provides one over the analytic
simulator; the relay provides one over real adapters.
"""
from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .. import simnet
from ..errors import (DegenerateSamplesError, FitInfeasibleError, OdsError,
                      TuningAbortedError, ValidationError)
from ..params import DEFAULT_STREAM_CAP, ParamVector
from .stream_model import fit_stream_model, optimal_streams
from .surface import ThroughputSurface

log = logging.getLogger(__name__)

MiB = 1024 * 1024
REL_TOL = 0.05
DRIFT_TOL = 0.10
COLD_PROBES = (1, 2, 4)
DEFAULT_AXES = (
    (1, 2, 3, 4, 6, 8, 12, 16, 24, 32),
    (1, 2, 3, 4, 6, 8, 12, 16, 24, 32),
    (1, 2, 4, 8, 16, 32),
)


class TunableJob(Protocol):
    def sample(self, params: ParamVector, nbytes: int) -> float: ...
    def apply_params(self, params: ParamVector) -> None: ...


@dataclass(frozen=True)
class TuningBudget:
    max_samples: int = 8
    sample_bytes: int = 16 * MiB

    def __post_init__(self):
        bad = [n for n in ("max_samples", "sample_bytes") if not getattr(self, n) >= 1]
        if bad:
            raise ValidationError("tuning budget must be positive", fields=bad)

    @property
    def max_bytes(self) -> int:
        return self.max_samples * self.sample_bytes


@dataclass(frozen=True)
class TuningGrid:
    """Per-axis candidate values; a hill-climb step moves one axis to the adjacent value."""

    axes: tuple = DEFAULT_AXES
    stream_cap: int = DEFAULT_STREAM_CAP

    def __post_init__(self):
        axes = tuple(tuple(sorted({int(v) for v in a})) for a in self.axes)
        if len(axes) != 3 or any(not a or a[0] < 1 for a in axes):
            raise ValidationError("grid needs three nonempty axes of positive integers", fields=["axes"])
        object.__setattr__(self, "axes", axes)

    @classmethod
    def of_surface(cls, surface: ThroughputSurface, stream_cap: int = DEFAULT_STREAM_CAP) -> "TuningGrid":
        return cls(surface.axes, stream_cap)

    def neighbors(self, pv: ParamVector) -> list[ParamVector]:
        """Axis-aligned one-step neighbours in the order cc-, cc+, p-, p+, pp-, pp+."""
        out = []
        cur = pv.as_tuple()
        for d, axis in enumerate(self.axes):
            i = bisect.bisect_left(axis, cur[d])
            lower = axis[i - 1] if i > 0 else None
            j = bisect.bisect_right(axis, cur[d])
            upper = axis[j] if j < len(axis) else None
            for v in (lower, upper):
                if v is None:
                    continue
                c = list(cur)
                c[d] = v
                cand = ParamVector(*c)
                if cand.streams <= self.stream_cap:
                    out.append(cand)
        return out

    def snap(self, value: int, axis: int) -> int:
        a = self.axes[axis]
        return min(a, key=lambda v: (abs(v - value), v))


@dataclass
class TuningResult:
    params: ParamVector
    throughput: float
    samples: int
    bytes_sampled: int
    basis: str                                        # surface | model
    timeline: list = field(default_factory=list)      # (sample index, ParamVector, Mbps or None)
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(), "throughput": self.throughput,
            "samples": self.samples, "bytes_sampled": self.bytes_sampled,
            "basis": self.basis, "aborted": self.aborted,
            "timeline": [[i, pv.to_dict(), th] for i, pv, th in self.timeline],
        }


class _Sampler:
    """Budget accounting and memoisation for one tuning round."""

    def __init__(self, job, budget: TuningBudget):
        self.job = job
        self.budget = budget
        self.used = 0
        self.failures = 0
        self.memo: dict[ParamVector, float] = {}
        self.timeline: list = []

    @property
    def left(self) -> int:
        return self.budget.max_samples - self.used

    def __call__(self, pv: ParamVector) -> float | None:
        if pv in self.memo:
            return self.memo[pv]
        if self.left <= 0:
            return None
        self.used += 1
        try:
            th = float(self.job.sample(pv, self.budget.sample_bytes))
            if not math.isfinite(th) or th < 0:
                raise ValueError(f"bad measurement {th!r}")
        except (OdsError, OSError, ValueError) as exc:
            self.failures += 1
            log.warning("sample at %s failed: %s", pv, exc)
            self.timeline.append((self.used, pv, None))
            return None
        self.memo[pv] = th
        self.timeline.append((self.used, pv, th))
        return th


def online_tune(
    job: TunableJob,
    start: ParamVector,
    surface: ThroughputSurface | None = None,
    budget: TuningBudget | None = None,
    grid: TuningGrid | None = None,
    rel_tol: float = REL_TOL,
    apply: bool = True,
    known: dict | None = None,
) -> TuningResult:
    """Sample, then hill-climb, then apply the best measured params to ``job``.

    With a surface the first sample is taken at ``start`` and hill-climb
    candidates are tried in order of predicted throughput. Without one,
    ``start`` is probed at 1x, 2x and 4x its parallelism, the three samples
    feed the stream model, and its predicted optimum is measured before
    climbing. A move is taken only when the measured gain exceeds ``rel_tol``.
    ``known`` seeds free measurements (e.g. the job's current rate) that
    compete with sampled points but cost no budget.
    """
    budget = budget or TuningBudget()
    if grid is None:
        grid = TuningGrid.of_surface(surface) if surface is not None else TuningGrid()
    start.check_cap(grid.stream_cap)
    s = _Sampler(job, budget)
    s.memo.update(known or {})

    if surface is not None:
        basis = "surface"
        s(start)
    else:
        basis = "model"
        _cold_phase(s, start, grid)

    if not s.memo:
        raise TuningAbortedError("every tuning sample failed; job continues at start params",
                                 start=start.to_dict(), failures=s.failures)

    cur = max(s.memo, key=lambda pv: (s.memo[pv], pv == start))
    momentum: tuple | None = None
    while s.left > 0:
        cands = grid.neighbors(cur)
        if surface is not None:
            cands.sort(key=lambda n: -_predict(surface, n))
        elif momentum is not None:
            cands.sort(key=lambda n: _direction(cur, n) != momentum)
        moved = False
        for n in cands:
            if n in s.memo and s.memo[n] <= s.memo[cur] * (1 + rel_tol):
                continue
            th = s(n)
            if th is not None and th > s.memo[cur] * (1 + rel_tol):
                momentum = _direction(cur, n)
                cur = n
                moved = True
                break
            if s.left <= 0:
                break
        if not moved:
            break

    if apply:
        job.apply_params(cur)
    return TuningResult(cur, s.memo[cur], s.used, s.used * budget.sample_bytes, basis, s.timeline)


def _cold_phase(s: _Sampler, start: ParamVector, grid: TuningGrid) -> None:
    probes = []
    for k in COLD_PROBES:
        pv = ParamVector(start.cc, start.p * k, start.pp)
        if pv.streams > grid.stream_cap:
            break
        th = s(pv)
        if th is not None and th > 0:
            probes.append((pv.streams, th))
    if len(probes) != 3:
        return
    try:
        fit = fit_stream_model(probes)
    except (DegenerateSamplesError, FitInfeasibleError) as exc:
        log.info("stream model unusable (%s); climbing from best probe", exc.code)
        return
    n_max = grid.stream_cap
    n_best = optimal_streams(fit, n_max)
    p = max(1, grid.snap(round(n_best / start.cc), 1))
    while start.cc * p > grid.stream_cap and p > 1:
        p -= 1
    s(ParamVector(start.cc, p, start.pp))


def _predict(surface: ThroughputSurface, pv: ParamVector) -> float:
    # outside the hull clamp to the nearest face so ordering stays defined
    lo, hi = surface.lower.as_tuple(), surface.upper.as_tuple()
    q = [min(max(v, a), b) for v, a, b in zip(pv.as_tuple(), lo, hi)]
    return surface.predict(q)


def _direction(a: ParamVector, b: ParamVector) -> tuple:
    return tuple(int(np.sign(y - x)) for x, y in zip(a.as_tuple(), b.as_tuple()))


@dataclass
class RetuneEvent:
    t: float
    reason: str
    result: TuningResult


def tune_job(
    job,
    start: ParamVector,
    surface_for: Callable[[object], ThroughputSurface | None] | ThroughputSurface | None = None,
    budget: TuningBudget | None = None,
    grid: TuningGrid | None = None,
    retune: bool = True,
    drift_tol: float = DRIFT_TOL,
    check_every: float = 1.0,
) -> list[RetuneEvent]:
    """Tune once, then keep the job running and re-tune when its rate drifts.

    ``job`` must additionally provide ``done``, ``clock`` (s), ``params``,
    ``advance(seconds)`` and ``current_throughput()``. ``surface_for`` is
    either a fixed surface or a callable of the job returning the surface
    for its present regime (or None).
    """
    def pick_surface():
        return surface_for(job) if callable(surface_for) else surface_for

    events = []
    try:
        res = online_tune(job, start, pick_surface(), budget, grid)
    except TuningAbortedError as exc:
        log.warning("%s", exc)
        return events
    events.append(RetuneEvent(job.clock, "initial", res))
    ref = res.throughput
    while not job.done:
        job.advance(check_every)
        if job.done or not retune:
            continue
        now = job.current_throughput()
        if ref > 0 and abs(now - ref) / ref > drift_tol:
            surface = pick_surface()
            begin = surface.maxima[0][0] if surface is not None and surface.maxima else job.params
            try:
                res = online_tune(job, begin, surface, budget, grid, known={job.params: now})
            except TuningAbortedError as exc:
                log.warning("%s", exc)
                ref = now
                continue
            events.append(RetuneEvent(job.clock, f"drift {now / ref - 1:+.1%}", res))
            ref = res.throughput
    return events


class SimnetJob:
    """A running transfer on the analytic simulator, driven by a virtual clock.

    The job moves ``total_bytes`` of average-sized files; at any instant its
    rate is ``simnet.steady_throughput`` for the current params and the
    background flows the load profile has at the current clock. Sampling
    moves real job bytes, so tuning time counts toward completion.
    """

    def __init__(self, link: simnet.LinkModel, load: simnet.LoadProfile, dataset: simnet.Dataset,
                 params: ParamVector = ParamVector(), chunk_size: int = simnet.DEFAULT_CHUNK,
                 noise: float = 0.0, seed: int = 0):
        self.link = link
        self.load = load
        self.avg_file_size = dataset.avg_file_size
        self.total_bytes = dataset.total_size
        self.chunk_size = chunk_size
        self.noise = noise
        self._rng = np.random.default_rng(seed)
        self.params = params
        self.clock = 0.0
        self.moved = 0.0
        self.history: list = [(0.0, params)]
        self.samples: list = []    # (t, params, Mbps)

    @property
    def done(self) -> bool:
        return self.moved >= self.total_bytes

    @property
    def remaining(self) -> float:
        return max(self.total_bytes - self.moved, 0.0)

    def rate(self, params: ParamVector | None = None, t: float | None = None) -> float:
        """Noiseless Mbps at ``params`` (default: current) and time ``t`` (default: now)."""
        t = self.clock if t is None else t
        return simnet.steady_throughput(self.link, params or self.params, self.load.flows_at(t),
                                        self.avg_file_size, self.chunk_size)

    def _measure(self, th: float) -> float:
        if self.noise:
            th *= float(self._rng.uniform(1 - self.noise, 1 + self.noise))
        return th

    def _move(self, params: ParamVector, nbytes: float) -> None:
        # piecewise over load segments so a shift mid-move is honoured
        left = min(nbytes, self.remaining)
        while left > 0:
            nxt = next((s for s, _ in self.load.segments if s > self.clock), math.inf)
            bps = self.rate(params) * 1e6 / 8
            if bps <= 0:
                raise ValidationError("simulated link carries no data")
            dt = left / bps
            if self.clock + dt > nxt:
                step = (nxt - self.clock) * bps
                self.clock = nxt
            else:
                step = left
                self.clock += dt
            self.moved += step
            left -= step

    def sample(self, params: ParamVector, nbytes: int) -> float:
        params.check_cap()
        th = self._measure(self.rate(params))
        self._move(params, nbytes)
        self.samples.append((self.clock, params, th))
        return th

    def apply_params(self, params: ParamVector) -> None:
        params.check_cap()
        self.params = params
        self.history.append((self.clock, params))

    def current_throughput(self) -> float:
        return self._measure(self.rate())

    def advance(self, seconds: float) -> None:
        if self.done:
            return
        target = self.clock + seconds
        while not self.done and self.clock < target - 1e-12:
            nxt = min(next((s for s, _ in self.load.segments if s > self.clock), math.inf), target)
            bps = self.rate() * 1e6 / 8
            take = min((nxt - self.clock) * bps, self.remaining)
            self.clock += take / bps
            self.moved += take
