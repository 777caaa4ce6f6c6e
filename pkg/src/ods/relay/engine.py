"""Job execution: taps wired to sinks under a live ParamVector.

Threads per job: one dispatcher, one thread per active file (at most cc),
and per file up to p channel threads. A channel owns a contiguous stripe of
the file and moves it in batches of at most pp chunks; between batches it
re-reads the job's params, which is the only point where a change of cc,
p or pp takes effect.
"""
from __future__ import annotations

import collections
import heapq
import itertools
import logging
import math
import queue
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .. import simnet
from ..endpoint import (DataSlice, Sink, Tap, chunked, connect, list_tree, translate_capabilities)
from ..errors import (IntegrityError, NotFoundError, OdsError, StateMachineError,
                      UnrecoverableJournalError)
from ..params import DEFAULT_STREAM_CAP, ParamVector
from ..ranges import RangeSet
from ..simnet import TransferOutcome
from .job import CredentialResolver, TransferJob
from .journal import FileEntry, Journal, JournalState, now_ms, replay

log = logging.getLogger(__name__)

WINDOW_S = 1.0


class InjectedCrash(Exception):
    """Raised by a fault hook to emulate the process dying mid-transfer."""


@dataclass(frozen=True)
class ProgressEvent:
    job_id: str
    kind: str                 # progress | params | file_done | file_failed | done | failed | crashed
    t: float                  # s since the run started, on the run's clock
    committed: int            # bytes committed for the job, all runs
    total: int                # bytes selected
    mbps: float = 0.0         # rate over the window that just closed
    params: ParamVector | None = None
    file_id: str = ""
    detail: str = ""

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("job_id", "kind", "t", "committed", "total", "mbps",
                                             "file_id", "detail")}
        d["params"] = self.params.to_dict() if self.params else None
        return d


class ProgressBus:
    """Single producer, many consumers; every subscriber sees every event."""

    def __init__(self):
        self._subs: list[queue.Queue] = []
        self._callbacks: list[Callable] = []
        self._lock = threading.Lock()

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subs.append(q)
        return q

    def on(self, callback: Callable[[ProgressEvent], None]) -> None:
        with self._lock:
            self._callbacks.append(callback)

    def publish(self, ev: ProgressEvent) -> None:
        with self._lock:
            subs, cbs = list(self._subs), list(self._callbacks)
        for q in subs:
            q.put(ev)
        for cb in cbs:
            try:
                cb(ev)
            except Exception:   # a broken consumer must not kill the transfer
                log.exception("progress consumer failed")


class WallClock:
    def __init__(self):
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def begin(self, key) -> None:
        pass

    def end(self, key) -> None:
        pass

    def turn(self, key) -> bool:
        return True

    def at(self, key) -> float:
        return self.now()

    def data(self, nbytes: int, params: ParamVector, key=None, chunks: int = 0) -> None:
        pass

    def commands(self, size: int, chunk: int, params: ParamVector, key=None) -> None:
        pass


class SimClock:
    """Virtual time from the analytic link model instead of the wall.

    Every concurrency slot keeps its own cursor. A file started with
    ``begin`` takes the slot that fell free earliest (or a new slot), moves
    its data at ``effective_throughput / cc`` for the params in force and the
    background load at its cursor, and pays its command round trips as its
    chunks go out. ``turn`` lets only the file with the earliest cursor move
    its next batch, so the virtual schedule does not depend on how the OS
    schedules threads. ``now`` is the earliest cursor of the files in flight,
    or the latest finish once none are.

    With ``noise`` > 0 the rate is scaled by a factor drawn uniformly from
    [1 - noise, 1 + noise], redrawn once per virtual second.
    """

    def __init__(self, link: simnet.LinkModel, load: simnet.LoadProfile | None = None,
                 noise: float = 0.0, seed: int | None = None):
        self.link = link
        self.load = load or simnet.LoadProfile()
        self.noise = noise
        self._rng = random.Random(seed)
        self._factors: dict[int, float] = {}
        self._cmds: dict = {}
        self._slots: dict = {}          # key -> cursor of the slot the file occupies
        self._free: list[float] = []    # heap of cursors of idle slots
        self._t = 0.0
        self._hi = 0.0
        self._lock = threading.Lock()

    def now(self) -> float:
        return self._t

    def _sync(self) -> None:
        low = min(self._slots.values()) if self._slots else self._hi
        self._t = max(self._t, low)

    def _factor(self, t: float) -> float:
        if not self.noise:
            return 1.0
        k = int(t)
        if k not in self._factors:
            self._factors[k] = self._rng.uniform(1 - self.noise, 1 + self.noise)
        return self._factors[k]

    def begin(self, key) -> None:
        with self._lock:
            if key in self._slots:
                return
            if self._free:
                start = heapq.heappop(self._free)
            else:
                start = self._t + self.link.setup_cost / 1000
            self._slots[key] = start
            self._sync()

    def end(self, key) -> None:
        with self._lock:
            t = self._slots.pop(key, None)
            self._cmds.pop(key, None)
            if t is not None:
                heapq.heappush(self._free, t)
                self._hi = max(self._hi, t)
            self._sync()

    def turn(self, key) -> bool:
        with self._lock:
            t = self._slots.get(key)
            return t is None or t <= min(self._slots.values())

    def at(self, key) -> float:
        with self._lock:
            return self._slots.get(key, self._t)

    def _charge(self, key, count: int, params: ParamVector) -> float:
        # command time of a file accrues as its chunks move, so observed
        # rates already include it; ceil(count / pp) telescopes to the
        # per-file total of the closed form
        old = self._cmds.get(key, 0)
        if count <= old:
            return 0.0
        self._cmds[key] = count
        rounds = math.ceil(count / params.pp) - math.ceil(old / params.pp)
        return rounds * self.link.command_rtt / 1000

    def _advance(self, key, dt: float) -> None:
        if key in self._slots:
            self._slots[key] += dt
            self._hi = max(self._hi, self._slots[key])
        else:
            # untracked work runs on the shared clock
            self._t += dt
            self._hi = max(self._hi, self._t)
        self._sync()

    def data(self, nbytes: int, params: ParamVector, key=None, chunks: int = 0) -> None:
        with self._lock:
            dt = self._charge(key, max(self._cmds.get(key, 0), simnet.F_SETUP) + chunks, params)
            t = self._slots.get(key, self._t) + dt
            rate = (simnet.effective_throughput(self.link, params, self.load.flows_at(t)) / params.cc
                    * self._factor(t))
            self._advance(key, dt + nbytes * 8 / (rate * 1e6))

    def commands(self, size: int, chunk: int, params: ParamVector, key=None) -> None:
        with self._lock:
            self._advance(key, self._charge(key, simnet.F_SETUP + math.ceil(size / chunk), params))


class WorkPool:
    """Remaining chunks of one file, split into contiguous stripes.

    Channels own one stripe at a time. A channel whose stripe runs dry takes
    an unowned stripe, or else steals the back half of the longest owned one.
    """

    def __init__(self, gaps, chunk: int, p: int):
        pieces = [c for a, b in gaps for c in chunked(a, b, chunk)]
        p = max(1, min(p, len(pieces))) if pieces else 1
        edges = [len(pieces) * i // p for i in range(p + 1)]
        self.free = collections.deque(collections.deque(pieces[a:b]) for a, b in zip(edges, edges[1:]) if b > a)
        self.owned: dict[int, collections.deque] = {}

    def stealable(self) -> bool:
        return bool(self.free) or any(len(d) >= 2 for d in self.owned.values())

    def empty(self) -> bool:
        return not self.free and not any(self.owned.values())

    def _acquire(self, cid: int) -> bool:
        if self.free:
            self.owned[cid] = self.free.popleft()
            return True
        victim = max(self.owned.values(), key=len, default=None)
        if victim is None or len(victim) < 2:
            return False
        half = len(victim) // 2
        tail = collections.deque(victim.pop() for _ in range(half))
        tail.reverse()
        self.owned[cid] = tail
        return True

    def claim(self, cid: int, n: int) -> list:
        mine = self.owned.get(cid)
        if not mine:
            self.owned.pop(cid, None)
            if not self._acquire(cid):
                return []
            mine = self.owned[cid]
        return [mine.popleft() for _ in range(min(n, len(mine)))]

    def release(self, cid: int) -> None:
        d = self.owned.pop(cid, None)
        if d:
            self.free.append(d)


class FileTask:
    def __init__(self, run: "JobRun", entry: FileEntry):
        self.run = run
        self.entry = entry
        self.live = 0
        self.error: Exception | None = None
        self.pool: WorkPool | None = None
        self.t_start = self.t_end = 0.0
        self._cid = itertools.count()

    def execute(self) -> None:
        run, e = self.run, self.entry
        self.t_start = run.clock.at(e.idx)
        resumed = bool(e.committed)
        tap = sink = None
        try:
            tap = Tap(run.src_session, e.src, e.file_id)
            if tap.size != e.size:
                raise IntegrityError(f"{e.src} changed size from {e.size} to {tap.size}")
            sink = Sink(run.dst_session, e.dst, e.size, transfer_id=e.transfer_id,
                        resume=resumed, present=e.committed)
            self.pool = WorkPool(e.committed.gaps(0, e.size), run.chunk, run.params.p)
            self._drive(tap, sink)
            if run.stopped:
                return
            if self.error is not None:
                raise self.error
            sink.finalize(tap.crc())
            sink = None
        except InjectedCrash:
            run.crash()
            return
        except IntegrityError as exc:
            if sink is not None:
                sink.abort()
            run.file_failed(self, exc)
            return
        except NotFoundError as exc:
            run.file_failed(self, exc)
            return
        except (OdsError, OSError) as exc:
            run.fail(exc)
            return
        run.file_done(self, tap.crc())

    def _drive(self, tap: Tap, sink: Sink) -> None:
        run = self.run
        threads = []
        with run.cond:
            while True:
                if run.stopped or self.error is not None:
                    break
                if self.pool.empty() and self.live == 0:
                    break
                if (not run.paused and self.live < run.params.p
                        and (self.pool.stealable() if self.live else not self.pool.empty())):
                    self.live += 1
                    cid = next(self._cid)
                    run.trace_event("channel_open", file=self.entry.file_id, live=self.live, p=run.params.p)
                    t = threading.Thread(target=self._channel, args=(cid, tap, sink), daemon=True,
                                         name=f"{run.job.job_id}-{self.entry.idx}-ch{cid}")
                    threads.append(t)
                    t.start()
                    continue
                run.cond.wait(0.5)
        for t in threads:
            t.join()

    def _channel(self, cid: int, tap: Tap, sink: Sink) -> None:
        run = self.run
        retired = False
        try:
            with tap.channel(run.params.pp) as rc, sink.channel(run.params.pp) as wc:
                while True:
                    with run.cond:
                        while (run.paused or not run.clock.turn(self.entry.idx)) and not run.stopped:
                            run.cond.wait()
                        if run.stopped or self.error is not None:
                            return
                        params = run.params
                        if self.live > params.p:
                            self.live -= 1
                            retired = True
                            run.trace_event("channel_retire", file=self.entry.file_id, live=self.live, p=params.p)
                            return
                        batch = self.pool.claim(cid, params.pp)
                        run.in_flight[cid, self.entry.idx] = len(batch)
                    if not batch:
                        return
                    rc.set_window(params.pp)
                    wc.set_window(params.pp)
                    datas = rc.read_many(batch)
                    size = self.entry.size
                    wc.write_many([DataSlice(self.entry.file_id, o, n, d, o + n == size)
                                   for (o, n), d in zip(batch, datas)])
                    run.on_batch(self, batch, params)
                    with run.cond:
                        run.in_flight[cid, self.entry.idx] = 0
                        run.cond.notify_all()
        except InjectedCrash:
            run.crash()
        except (OdsError, OSError) as exc:
            with run.cond:
                if self.error is None:
                    self.error = exc
        finally:
            with run.cond:
                run.in_flight.pop((cid, self.entry.idx), None)
                if self.pool is not None:
                    self.pool.release(cid)
                if not retired:
                    self.live -= 1
                run.cond.notify_all()


class JobRun:
    """One execution (fresh or resumed) of a job."""

    def __init__(self, relay: "Relay", job: TransferJob, params: ParamVector, state: JournalState | None,
                 progress=None, fault=None, clock=None):
        self.relay = relay
        self.job = job
        self.params = params
        self.state = state or JournalState(job.job_id)
        self.resumed = state is not None
        self.clock = clock or WallClock()
        self.fault = fault
        self.bus = ProgressBus()
        if progress is not None:
            self.bus.on(progress)
        self.cond = threading.Condition()
        self.paused = False
        self.stopped = False
        self.crashed = False
        self.error: Exception | None = None
        self.moved = 0
        self.in_flight: dict = {}
        self.active: dict[int, FileTask] = {}
        self.done_tasks: list[FileTask] = []
        self.params_used: list = [(0.0, params)]
        self.trace: list = []
        self.max_active = 0
        self.outcome: TransferOutcome | None = None
        self.finished = threading.Event()
        self._win_start = 0.0
        self._win_bytes = 0
        self.last_mbps = 0.0
        plan = translate_capabilities(job.src.scheme, job.dst.scheme)
        self.plan = plan
        self.chunk = plan.effective_chunk(relay.chunk_size)
        self.journal = Journal(relay.journal_path(job.job_id), job.job_id, fresh=not self.resumed)
        self.src_session = connect(job.src, job.src_cred)
        self.dst_session = connect(job.dst, job.dst_cred)
        self._thread = threading.Thread(target=self._main, name=f"job-{job.job_id}", daemon=True)

    # ---- bookkeeping

    @property
    def total_bytes(self) -> int:
        return sum(f.size for f in self.state.files.values())

    @property
    def committed(self) -> int:
        return self.state.committed_bytes

    def trace_event(self, kind: str, **info) -> None:
        self.trace.append((self.clock.now(), kind, info))

    def emit(self, kind: str, **kw) -> None:
        self.bus.publish(ProgressEvent(self.job.job_id, kind, self.clock.now(), self.committed,
                                       self.total_bytes, params=kw.pop("params", self.params), **kw))

    def on_batch(self, task: FileTask, batch, params: ParamVector) -> None:
        n = sum(k for _, k in batch)
        with self.cond:
            if self.stopped:
                return
            for o, k in batch:
                self.journal.write({"type": "range", "idx": task.entry.idx, "start": o, "end": o + k})
                task.entry.committed.add(o, o + k)
            self.moved += n
            self.clock.data(n, params, task.entry.idx, len(batch))
            now = self.clock.now()
            self._win_bytes += n
            while now - self._win_start >= WINDOW_S:
                # one event per closed window; a long batch can close several
                span = now - self._win_start
                self.last_mbps = self._win_bytes * 8 / span / 1e6
                self._win_start = min(self._win_start + WINDOW_S * math.floor(span / WINDOW_S), now)
                self._win_bytes = 0
                self.emit("progress", mbps=self.last_mbps)
            self.cond.notify_all()
        if self.fault is not None:
            self.fault(self, task, self.moved)

    def file_done(self, task: FileTask, crc: int) -> None:
        with self.cond:
            if self.stopped:
                return
            self.journal.write({"type": "commit", "idx": task.entry.idx, "crc": crc}, sync=True)
            task.entry.status, task.entry.crc = "done", crc
            self.clock.commands(task.entry.size, self.chunk, self.params, task.entry.idx)
            task.t_end = self.clock.at(task.entry.idx)
            self.emit("file_done", file_id=task.entry.file_id)

    def file_failed(self, task: FileTask, exc: Exception) -> None:
        with self.cond:
            if self.stopped:
                return
            msg = getattr(exc, "message", "") or str(exc)
            self.journal.write({"type": "file_failed", "idx": task.entry.idx, "error": msg}, sync=True)
            task.entry.status, task.entry.error = "failed", msg
            task.t_end = self.clock.at(task.entry.idx)
            self.emit("file_failed", file_id=task.entry.file_id, detail=msg)

    def fail(self, exc: Exception) -> None:
        with self.cond:
            if self.error is None and not self.stopped:
                self.error = exc
                self.stopped = True
            self.cond.notify_all()

    def crash(self) -> None:
        with self.cond:
            if not self.crashed:
                self.crashed = True
                self.stopped = True
                self.journal.abandon()
            self.cond.notify_all()

    def set_params(self, params: ParamVector) -> dict:
        with self.cond:
            old = self.params
            self.params = params
            t = self.clock.now()
            self.params_used.append((t, params))
            self.journal.write({"type": "params", "t": now_ms(), "params": params.to_dict(),
                                "previous": old.to_dict()}, sync=True)
            self.trace_event("params", params=params.as_tuple())
            self.cond.notify_all()
        self.emit("params", params=params)
        return {"job_id": self.job.job_id, "params": params.to_dict(), "t": t, "changed": params != old}

    def pause(self) -> None:
        with self.cond:
            self.paused = True
            self.journal.write({"type": "phase", "t": now_ms(), "phase": "paused"}, sync=True)
            self.cond.notify_all()

    def wait_drained(self, timeout: float | None = None) -> bool:
        """After pause(): block until no batch is in flight."""
        end = None if timeout is None else time.monotonic() + timeout
        with self.cond:
            while any(self.in_flight.values()):
                left = None if end is None else end - time.monotonic()
                if left is not None and left <= 0:
                    return False
                self.cond.wait(left)
        return True

    def unpause(self) -> None:
        with self.cond:
            self.paused = False
            self.journal.write({"type": "phase", "t": now_ms(), "phase": "running"}, sync=True)
            self.cond.notify_all()

    # ---- main loop

    def start(self) -> "JobRun":
        self._thread.start()
        return self

    def wait(self, timeout: float | None = None) -> TransferOutcome:
        self.finished.wait(timeout)
        if self.crashed:
            raise InjectedCrash(f"job {self.job.job_id} crashed by fault injection")
        if self.error is not None:
            raise self.error
        if self.outcome is None:
            raise TimeoutError(f"job {self.job.job_id} still running")
        return self.outcome

    def _list(self) -> None:
        idx = 0
        for sel in self.job.selection:
            root = self.job.src.child(sel).path
            st = list_tree(self.src_session, root)
            for rel, fst in st.walk():
                rel_path = sel if not st.is_dir else f"{sel}/{rel}"
                entry = FileEntry(idx, rel_path, self.job.src.child(rel_path).path,
                                  self.job.dst.child(rel_path).path, fst.size, f"{self.job.job_id}-{idx}")
                self.state.files[idx] = entry
                self.journal.write({"type": "file", "idx": idx, "file_id": rel_path, "src": entry.src,
                                    "dst": entry.dst, "size": entry.size, "transfer_id": entry.transfer_id})
                idx += 1
        self.journal.write({"type": "phase", "t": now_ms(), "phase": "listed"}, sync=True)

    def _main(self) -> None:
        try:
            if not self.resumed:
                self.journal.write({"type": "job", "job": self.job.to_dict()})
            self.journal.write({"type": "phase", "t": now_ms(), "phase": "running"})
            self.journal.write({"type": "params", "t": now_ms(), "params": self.params.to_dict()}, sync=True)
            if not self.state.listed:
                self._list()
            pending = collections.deque(f for _, f in sorted(self.state.files.items()) if f.status == "pending")
            threads = []
            with self.cond:
                while True:
                    if self.stopped:
                        break
                    if not pending and not self.active:
                        break
                    if pending and not self.paused and len(self.active) < self.params.cc:
                        task = FileTask(self, pending.popleft())
                        self.active[task.entry.idx] = task
                        self.clock.begin(task.entry.idx)
                        self.max_active = max(self.max_active, len(self.active))
                        self.trace_event("file_open", file=task.entry.file_id, active=len(self.active),
                                         cc=self.params.cc)
                        t = threading.Thread(target=self._run_task, args=(task,), daemon=True)
                        threads.append(t)
                        t.start()
                        continue
                    self.cond.wait(0.5)
            for t in threads:
                t.join()
        except InjectedCrash:
            self.crash()
        except (OdsError, OSError) as exc:
            self.fail(exc)
        finally:
            self._finish()

    def _run_task(self, task: FileTask) -> None:
        try:
            task.execute()
        finally:
            with self.cond:
                self.active.pop(task.entry.idx, None)
                self.clock.end(task.entry.idx)
                self.done_tasks.append(task)
                self.trace_event("file_close", file=task.entry.file_id, active=len(self.active))
                self.cond.notify_all()

    def _finish(self) -> None:
        if self.crashed:
            self.relay._forget(self)
            self.finished.set()
            return
        dur = self.clock.now()
        if self.error is not None:
            self.journal.write({"type": "phase", "t": now_ms(), "phase": "failed"}, sync=True)
            self.journal.close()
            self.emit("failed", detail=getattr(self.error, "message", "") or str(self.error))
        else:
            self.journal.write({"type": "phase", "t": now_ms(), "phase": "done"}, sync=True)
            self.journal.close()
            status = {f.file_id: ("done" if f.status == "done" else f"failed: {f.error}")
                      for f in self.state.files.values()}
            times = [(t.entry.file_id, t.t_start, max(t.t_end, t.t_start)) for t in
                     sorted(self.done_tasks, key=lambda t: t.entry.idx)]
            avg = self.moved * 8 / dur / 1e6 if dur > 0 else 0.0
            self.outcome = TransferOutcome(dur, avg, self.moved, times, list(self.params_used), status)
            self.emit("done", mbps=avg)
        self.relay._forget(self)
        self.finished.set()


class Relay:
    """Runs jobs and owns their journals under ``journal_dir``."""

    def __init__(self, journal_dir, resolver: CredentialResolver | None = None,
                 stream_cap: int = DEFAULT_STREAM_CAP, chunk_size: int | None = None):
        self.journal_dir = Path(journal_dir)
        self.journal_dir.mkdir(parents=True, exist_ok=True)
        self.resolver = resolver or CredentialResolver()
        self.stream_cap = stream_cap
        self.chunk_size = chunk_size
        self._runs: dict[str, JobRun] = {}
        self._lock = threading.Lock()

    def journal_path(self, job_id: str) -> Path:
        return self.journal_dir / f"{job_id}.jsonl"

    def _forget(self, run: JobRun) -> None:
        with self._lock:
            if self._runs.get(run.job.job_id) is run:
                del self._runs[run.job.job_id]

    def get(self, job_id: str) -> JobRun:
        with self._lock:
            run = self._runs.get(job_id)
        if run is None:
            raise NotFoundError(f"job {job_id} is not running", job_id=job_id)
        return run

    def running(self) -> list[str]:
        with self._lock:
            return list(self._runs)

    def _launch(self, job, params, state, progress, fault, clock) -> JobRun:
        params.check_cap(self.stream_cap)
        with self._lock:
            if job.job_id in self._runs:
                raise StateMachineError(f"job {job.job_id} is already running", job_id=job.job_id)
            self.resolver.remember(job.src, job.src_cred)
            self.resolver.remember(job.dst, job.dst_cred)
            run = JobRun(self, job, params, state, progress, fault, clock)
            self._runs[job.job_id] = run
        return run.start()

    def start(self, job: TransferJob, params: ParamVector | None = None, progress=None, fault=None,
              clock=None) -> JobRun:
        """Begin ``job`` in the background and return its run handle."""
        if params is None:
            params = ParamVector() if job.auto else job.params
        return self._launch(job, params, None, progress, fault, clock)

    def execute(self, job: TransferJob, params: ParamVector | None = None, progress=None, fault=None,
                clock=None) -> TransferOutcome:
        return self.start(job, params, progress, fault, clock).wait()

    def apply_params(self, job_id: str, params: ParamVector) -> dict:
        run = self.get(job_id)
        params.check_cap(self.stream_cap)
        return run.set_params(params)

    def load_state(self, job_id: str) -> JournalState:
        return replay(self.journal_path(job_id))

    def resume_run(self, job_id: str, progress=None, fault=None, clock=None, restart: bool = False,
                   params: ParamVector | None = None) -> JobRun | TransferOutcome:
        path = self.journal_path(job_id)
        try:
            state = replay(path)
        except UnrecoverableJournalError:
            if not restart:
                raise
            job = self._salvage_job(path)
            path.replace(path.with_suffix(".corrupt"))
            return self._launch(job, params or (ParamVector() if job.auto else job.params),
                                None, progress, fault, clock)
        job = TransferJob.from_dict(state.job, self.resolver)
        if state.torn_tail:
            _truncate_torn(path)
        if state.complete:
            status = {f.file_id: ("done" if f.status == "done" else f"failed: {f.error}")
                      for f in state.files.values()}
            return TransferOutcome(0.0, 0.0, 0, [], [(0.0, state.last_params or ParamVector())], status)
        params = params or state.last_params or ParamVector()
        return self._launch(job, params, state, progress, fault, clock)

    def resume(self, job_id: str, progress=None, fault=None, clock=None, restart: bool = False) -> TransferOutcome:
        """Finish a journaled job, moving only ranges the journal does not show as committed."""
        r = self.resume_run(job_id, progress, fault, clock, restart)
        return r if isinstance(r, TransferOutcome) else r.wait()

    def _salvage_job(self, path: Path) -> TransferJob:
        import json
        for line in path.read_text(encoding="utf-8", errors="replace").splitlines():
            try:
                r = json.loads(line)
            except ValueError:
                continue
            if r.get("type") == "job":
                return TransferJob.from_dict(r["job"], self.resolver)
        raise UnrecoverableJournalError(f"{path}: journal holds no job description to restart from")


def _truncate_torn(path: Path) -> None:
    data = path.read_bytes()
    cut = data.rfind(b"\n") + 1
    with open(path, "r+b") as fh:
        fh.truncate(cut)
