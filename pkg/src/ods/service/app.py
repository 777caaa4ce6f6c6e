"""The service core: wires scheduler, relay, optimizer and predictor together.

All state lives under ``config.data_path``:

    jobs.jsonl          scheduler journal (queue and transitions)
    journals/           one relay journal per job
    logs.jsonl          TransferLogRecord store
    idempotency.jsonl   client idempotency key -> job id
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .. import endpoint
from ..endpoint import Credential, ResourceURI, connect, list_tree
from ..errors import (ColdStartError, DegradedError, InsufficientDataError, OdsError, StateMachineError,
                      TuningAbortedError, ValidationError)
from ..optimizer import (KNNRegressor, LinkFeatures, LogStore, TuningBudget, TuningGrid, online_tune)
from ..params import ParamVector
from ..predictor import ETAEstimate, JobPredictor, predicted_duration
from ..records import TransferLogRecord
from ..relay import AUTO, CredentialResolver, Relay, TransferJob
from ..relay.journal import now_ms
from ..scheduler import QueueEntry, Scheduler
from .config import Config
from .monitor import MonitorSnapshot

log = logging.getLogger(__name__)


@dataclass
class JobView:
    """Runtime facts about one job that the queue entry does not hold."""

    job_id: str
    run: object = None
    predictor: JobPredictor | None = None
    outcome: object = None
    error: str = ""
    started_at: int | None = None
    finished_at: int | None = None
    params_timeline: list = field(default_factory=list)   # (epoch ms, ParamVector)
    tuning: dict | None = None
    committed: int = 0
    total: int = 0


class RunTuner:
    """Adapts a live relay run to the tuner's sample/apply interface.

    A sample switches the run to ``params`` and measures the rate while the
    next ``nbytes`` commit. Switches take effect at batch boundaries, so the
    first batch of a sample may still run at the previous params.
    """

    def __init__(self, run, timeout: float = 120.0):
        self.run = run
        self.timeout = timeout

    def apply_params(self, params: ParamVector) -> None:
        if params != self.run.params:
            self.run.set_params(params)

    def sample(self, params: ParamVector, nbytes: int) -> float:
        run = self.run
        self.apply_params(params)
        deadline = time.monotonic() + self.timeout
        with run.cond:
            b0, t0 = run.moved, run.clock.now()
            while run.moved - b0 < nbytes and not run.finished.is_set() and not run.stopped:
                left = deadline - time.monotonic()
                if left <= 0:
                    break
                run.cond.wait(min(left, 0.2))
            moved, dt = run.moved - b0, run.clock.now() - t0
        if moved <= 0 or dt <= 0:
            raise TuningAbortedError("job made no progress during the sample", params=params.to_dict())
        return moved * 8 / dt / 1e6


class OdsService:
    """``clock_for(job)`` and ``fault`` are passed to every relay run; tests use
    them to run jobs on simulated time or to pace them."""

    def __init__(self, config: Config | None = None, clock_for=None, fault=None):
        self.config = config or Config()
        self.clock_for = clock_for
        self.fault = fault
        self.started = time.monotonic()
        root = self.config.data_path
        root.mkdir(parents=True, exist_ok=True)
        self.resolver = CredentialResolver()
        self.relay = Relay(root / "journals", self.resolver, stream_cap=self.config.stream_cap,
                           chunk_size=self.config.chunk_size or None)
        self.logs = LogStore(path=root / "logs.jsonl")
        self.regressor = KNNRegressor()
        self.views: dict[str, JobView] = {}
        self._lock = threading.RLock()
        self._idem_path = root / "idempotency.jsonl"
        self._idem = self._load_idempotency()
        self.scheduler = Scheduler(root / "jobs.jsonl", self.config.max_concurrent_jobs,
                                   self.config.policy, on_transition=self._on_transition)
        self._recover()

    # ---- lifecycle

    def _load_idempotency(self) -> dict:
        keys = {}
        if self._idem_path.exists():
            for line in self._idem_path.read_text().splitlines():
                try:
                    r = json.loads(line)
                    keys[r["key"]] = r["job_id"]
                except (ValueError, KeyError):
                    continue
        return keys

    def _recover(self) -> None:
        """Restart runs for jobs the scheduler journal shows as active."""
        for e in self.scheduler.snapshot().by_state("running", "paused"):
            try:
                self._launch(e, resume=True)
                if e.state == "paused":
                    self.views[e.job_id].run.pause()
            except OdsError as exc:
                log.warning("cannot resume job %s: %s", e.job_id, exc)
                self.views.setdefault(e.job_id, JobView(e.job_id)).error = exc.message
                self._finish(e.job_id, "failed")
        self.scheduler.admit()

    def close(self) -> None:
        for job_id in self.relay.running():
            try:
                run = self.relay.get(job_id)
                run.pause()
                run.wait_drained(5.0)
            except OdsError:
                pass
        self.scheduler.close()

    def health(self) -> dict:
        return {
            "endpoint_registry": "up" if endpoint.schemes() else "degraded",
            "scheduler": "up" if self.scheduler._fh is not None else "degraded",
            "log_store": "up" if self.logs.path is None or os.access(self.logs.path.parent, os.W_OK) else "degraded",
        }

    def _require(self, component: str) -> None:
        if self.health()[component] != "up":
            raise DegradedError(f"{component} is degraded", component=component)

    # ---- submission

    def submit(self, body: dict, owner: str = "anonymous", idempotency_key: str | None = None) -> dict:
        self._require("scheduler")
        if not isinstance(body, dict):
            raise ValidationError("request body must be a JSON object", fields=["body"])
        with self._lock:
            if idempotency_key and idempotency_key in self._idem:
                job_id = self._idem[idempotency_key]
                return {"job_id": job_id, "state": self.scheduler.get(job_id).state, "replayed": True}
            job = self._parse_job(body, owner)
            prior = self._prior(body, job)
            duration = None
            if prior is not None:
                total = self._total_bytes(job)
                duration = predicted_duration(total, prior) if total is not None else None
            d = job.to_dict()
            if body.get("link"):
                d["link"] = body["link"]
            if prior is not None:
                d["prior_mbps"] = prior
            self.views[job.job_id] = JobView(job.job_id)
            self.scheduler.submit(d, predicted_duration=duration, priority=int(body.get("priority", 0)))
            if idempotency_key:
                with open(self._idem_path, "a") as fh:
                    fh.write(json.dumps({"key": idempotency_key, "job_id": job.job_id}) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
                self._idem[idempotency_key] = job.job_id
        return {"job_id": job.job_id, "state": self.scheduler.get(job.job_id).state,
                "predicted_duration": duration}

    def _parse_job(self, body: dict, owner: str) -> TransferJob:
        missing = [k for k in ("src", "dst") if not body.get(k)]
        selection = body.get("selection")
        if selection is None and body.get("src"):
            # a bare source path selects its last component
            src = ResourceURI.parse(body["src"])
            parent, _, name = src.path.rstrip("/").rpartition("/")
            if not name:
                missing.append("selection")
            else:
                body = dict(body, src=str(ResourceURI(src.scheme, src.authority, parent or "/")))
                selection = [name]
        if missing:
            raise ValidationError(f"missing required field(s): {', '.join(missing)}", fields=missing)
        if isinstance(selection, str) or not isinstance(selection, list):
            raise ValidationError("selection must be a list of paths", fields=["selection"])
        params = body.get("params", AUTO)
        try:
            if params != AUTO:
                if not isinstance(params, dict):
                    raise ValidationError("params must be an object or 'auto'", fields=["params"])
                params = ParamVector.from_dict(params)
                params.check_cap(self.config.stream_cap)
            src, dst = ResourceURI.parse(body["src"]), ResourceURI.parse(body["dst"])
        except ValidationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc), fields=["src", "dst"]) from None
        creds = {}
        for side in ("src", "dst"):
            c = body.get(f"{side}_cred") or {}
            if not isinstance(c, dict):
                raise ValidationError(f"{side}_cred must be an object", fields=[f"{side}_cred"])
            creds[side] = Credential(c.get("kind", "none"), c.get("principal", ""), c.get("secret", ""))
        kw = {"job_id": body["job_id"]} if body.get("job_id") else {}
        job = TransferJob(src, dst, tuple(selection), params, owner=body.get("owner", owner),
                          src_cred=creds["src"], dst_cred=creds["dst"], **kw)
        self.resolver.remember(src, creds["src"])
        self.resolver.remember(dst, creds["dst"])
        return job

    def _features(self, link: dict, regime: str | None = None) -> LinkFeatures:
        try:
            return LinkFeatures(float(link["rtt"]), float(link["bandwidth"]),
                                float(link.get("avg_file_size", 0) or 1.0), regime=regime)
        except (KeyError, TypeError, ValueError):
            raise ValidationError("link needs numeric rtt and bandwidth", fields=["link"]) from None

    def _prior(self, body: dict, job: TransferJob) -> float | None:
        """Throughput prior from the log store when the request describes its link."""
        link = body.get("link")
        if not link or not len(self.logs):
            return None
        try:
            feats = self._features(link, self._regime())
            if job.auto:
                v = self.regressor.recommend(feats, self.logs).predicted
            else:
                v = float(self.regressor.neighbors(feats, self.logs)[0][2].predict(job.params))
        except (ColdStartError, ValidationError):
            return None
        return v if v > 0 else None

    def _regime(self) -> str | None:
        # without a configured peak window every regime is a candidate
        return self.config.regime_at() if self.config.peak_hours else None

    def _total_bytes(self, job: TransferJob) -> int | None:
        try:
            session = connect(job.src, job.src_cred)
            return sum(list_tree(session, job.src.child(s).path).size for s in job.selection)
        except OdsError:
            return None

    # ---- execution

    def _on_transition(self, entry: QueueEntry, old: str) -> None:
        if entry.state == "running" and old == "queued":
            try:
                self._launch(entry)
            except OdsError as exc:
                log.warning("job %s failed to start: %s", entry.job_id, exc)
                self.views.setdefault(entry.job_id, JobView(entry.job_id)).error = exc.message
                threading.Thread(target=self._finish, args=(entry.job_id, "failed"), daemon=True).start()
        elif entry.state == "paused":
            run = self._run(entry.job_id)
            run.pause()
            run.wait_drained(30.0)
        elif entry.state == "running" and old == "paused":
            self._run(entry.job_id).unpause()

    def _run(self, job_id: str):
        view = self.views.get(job_id)
        if view is None or view.run is None or view.run.finished.is_set():
            raise StateMachineError(f"job {job_id} has no active run", job_id=job_id)
        return view.run

    def _launch(self, entry: QueueEntry, resume: bool = False) -> None:
        job = TransferJob.from_dict(entry.job, self.resolver)
        view = self.views.setdefault(entry.job_id, JobView(entry.job_id))
        start = job.params if not job.auto else self._auto_start(entry.job)
        prior = entry.job.get("prior_mbps")
        view.started_at = now_ms()
        view.predictor = JobPredictor(job.job_id, 0, prior=prior, t0_ms=view.started_at)

        def on_progress(ev, view=view):
            view.predictor.on_progress(ev)
            view.committed, view.total = ev.committed, ev.total
            if ev.kind == "params" and ev.params is not None:
                view.params_timeline.append((view.started_at + round(ev.t * 1000), ev.params))

        view.params_timeline = [(view.started_at, start)]
        if resume and self.relay.journal_path(job.job_id).exists():
            run = self.relay.resume_run(job.job_id, progress=on_progress, fault=self.fault,
                                        clock=self._clock(job), restart=True, params=start)
            if not hasattr(run, "finished"):
                view.outcome = run
                threading.Thread(target=self._finish, args=(job.job_id, "done"), daemon=True).start()
                return
        else:
            run = self.relay.start(job, start, progress=on_progress, fault=self.fault, clock=self._clock(job))
        view.run = run
        threading.Thread(target=self._watch, args=(job, view), daemon=True).start()
        if job.auto:
            threading.Thread(target=self._auto_tune, args=(view, start, entry.job), daemon=True).start()

    def _clock(self, job: TransferJob):
        return self.clock_for(job) if self.clock_for is not None else None

    def _auto_start(self, job_dict: dict) -> ParamVector:
        link = job_dict.get("link")
        if link and len(self.logs):
            try:
                return self.regressor.recommend(self._features(link, self._regime()), self.logs).params
            except (ColdStartError, ValidationError):
                pass
        return ParamVector()

    def _budget(self) -> TuningBudget:
        return TuningBudget(self.config.tuning_samples, self.config.tuning_sample_bytes)

    def _auto_tune(self, view: JobView, start: ParamVector, job_dict: dict) -> None:
        try:
            view.tuning = self._tune_run(view.run, start, job_dict)
        except OdsError as exc:
            view.tuning = {"error": exc.to_dict()}

    def _tune_run(self, run, start: ParamVector, job_dict: dict) -> dict:
        surface = None
        link = job_dict.get("link")
        if link and len(self.logs):
            try:
                surface = self.regressor.neighbors(self._features(link, self._regime()), self.logs)[0][2]
            except (ColdStartError, ValidationError):
                surface = None
        res = online_tune(RunTuner(run), start, surface=surface, budget=self._budget(),
                          grid=TuningGrid(stream_cap=self.config.stream_cap))
        return {"params": res.params.to_dict(), "throughput": res.throughput, "samples": res.samples,
                "basis": res.basis, "aborted": res.aborted,
                "timeline": [[i, pv.to_dict(), th] for i, pv, th in res.timeline]}

    def _watch(self, job: TransferJob, view: JobView) -> None:
        run = view.run
        run.finished.wait()
        if run.crashed:
            return
        if run.error is not None:
            view.error = getattr(run.error, "message", "") or str(run.error)
            self._finish(job.job_id, "failed")
            return
        view.outcome = run.outcome
        self._record_log(job, view)
        self._finish(job.job_id, "done")

    def _finish(self, job_id: str, state: str) -> None:
        view = self.views.setdefault(job_id, JobView(job_id))
        if view.finished_at is None:
            p = view.predictor
            view.finished_at = p.finished_at if p is not None and p.finished_at else now_ms()
        try:
            if self.scheduler.get(job_id).state == "paused":
                self.scheduler.set_state(job_id, "running")
            self.scheduler.set_state(job_id, state)
        except StateMachineError as exc:
            log.warning("job %s: %s", job_id, exc)

    def _record_log(self, job: TransferJob, view: JobView) -> None:
        """Completed jobs with link hints become training records."""
        out, link = view.outcome, self.scheduler.get(job.job_id).job.get("link")
        if not link or out is None or not out.per_file_times or out.duration <= 0:
            return
        try:
            files = len(out.per_file_times)
            rec = TransferLogRecord(job.src.authority or job.src.scheme, job.dst.authority or job.dst.scheme,
                                    float(link["rtt"]), float(link["bandwidth"]), files,
                                    out.total_bytes / files, out.total_bytes, *out.params_used[-1][1].as_tuple(),
                                    out.avg_throughput, now_ms(), self.config.regime_at())
            self.logs.append(rec)
        except (OdsError, KeyError, TypeError, ValueError) as exc:
            log.warning("job %s: not recorded in log store: %s", job.job_id, exc)

    # ---- queries and control

    def jobs(self) -> list[dict]:
        return [self.job_status(e.job_id, e) for e in self.scheduler.snapshot().entries]

    def job_status(self, job_id: str, entry: QueueEntry | None = None) -> dict:
        entry = entry or self.scheduler.get(job_id)
        view = self.views.get(job_id) or JobView(job_id)
        d = entry.to_dict()
        d.update({
            "src": entry.job.get("src"), "dst": entry.job.get("dst"), "selection": entry.job.get("selection"),
            "committed": view.committed, "total": view.total,
            "mbps": view.run.last_mbps if view.run is not None else 0.0,
            "params": self._current_params(entry, view),
            "params_timeline": [[t, pv.to_dict()] for t, pv in view.params_timeline],
            "started_at": view.started_at, "finished_at": view.finished_at,
            "error": view.error or None, "tuning": view.tuning,
        })
        if view.outcome is not None:
            o = view.outcome
            d["outcome"] = {"duration": o.duration, "avg_throughput": o.avg_throughput,
                            "total_bytes": o.total_bytes, "file_status": o.file_status}
        return d

    def _current_params(self, entry: QueueEntry, view: JobView):
        if view.run is not None:
            return view.run.params.to_dict()
        p = entry.job.get("params")
        return p if isinstance(p, dict) else None

    def eta(self, job_id: str) -> dict:
        entry = self.scheduler.get(job_id)
        view = self.views.get(job_id)
        if entry.state in ("done", "failed") and view is not None and view.finished_at is not None:
            f = view.finished_at
            rate = view.outcome.avg_throughput if view.outcome is not None else 0.0
            return ETAEstimate(f, rate, f, f, "observed", 0).to_dict()
        if view is not None and view.predictor is not None:
            return view.predictor.estimate().to_dict()
        prior = entry.job.get("prior_mbps")
        if prior and entry.predicted_duration is not None:
            t = now_ms() + round(entry.predicted_duration * 1000)
            return ETAEstimate(t, prior, t, t, "model", 0).to_dict()
        raise InsufficientDataError(f"no estimate yet for job {job_id}", job_id=job_id)

    def set_params(self, job_id: str, body: dict) -> dict:
        entry = self.scheduler.get(job_id)
        if entry.state not in ("running", "paused"):
            raise StateMachineError(f"job {job_id} is {entry.state}; params apply to active jobs only",
                                    job_id=job_id, state=entry.state)
        params = ParamVector.from_dict(body)
        params.check_cap(self.config.stream_cap)
        return self.relay.apply_params(job_id, params)

    def pause(self, job_id: str) -> dict:
        return self.scheduler.set_state(job_id, "paused").to_dict()

    def resume(self, job_id: str) -> dict:
        return self.scheduler.set_state(job_id, "running").to_dict()

    def tune(self, job_id: str) -> dict:
        entry = self.scheduler.get(job_id)
        if entry.state != "running":
            raise StateMachineError(f"job {job_id} is {entry.state}; only running jobs can be tuned",
                                    job_id=job_id, state=entry.state)
        run = self._run(job_id)
        result = self._tune_run(run, run.params, entry.job)
        self.views[job_id].tuning = result
        return result

    def recommend(self, query: dict) -> dict:
        regime = query.get("regime") or self._regime()
        feats = self._features({"rtt": query.get("rtt"), "bandwidth": query.get("bandwidth", query.get("bw")),
                                "avg_file_size": query.get("avg_file_size", query.get("avg_size", 0))}, regime)
        try:
            rec = self.regressor.recommend(feats, self.logs)
        except ColdStartError:
            return {"params": ParamVector().to_dict(), "basis": "default", "predicted": None, "regime": regime}
        return {"params": rec.params.to_dict(), "basis": "offline", "predicted": rec.predicted, "regime": regime}

    def ingest(self, text: str, fmt: str | None = None) -> dict:
        self._require("log_store")
        report = self.logs.ingest_text(text, fmt)
        return {"accepted": len(report.records), "errors": [{"row": r, "message": m} for r, m in report.errors],
                "total_records": len(self.logs)}

    def monitor(self) -> dict:
        return MonitorSnapshot.take(self).to_dict()
