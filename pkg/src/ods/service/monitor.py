from __future__ import annotations

import time
from dataclasses import asdict, dataclass

from ..errors import OdsError
from ..relay.journal import now_ms


@dataclass(frozen=True)
class JobHealth:
    job_id: str
    state: str
    committed: int
    mbps: float
    params: dict | None
    eta: dict | None


@dataclass(frozen=True)
class MonitorSnapshot:
    """Active jobs and component health, built from a single queue snapshot."""

    taken_at: int
    uptime: float
    jobs: tuple
    health: dict

    @classmethod
    def take(cls, svc) -> "MonitorSnapshot":
        snap = svc.scheduler.snapshot()
        jobs = []
        for e in snap.by_state("queued", "running", "paused"):
            view = svc.views.get(e.job_id)
            run = getattr(view, "run", None)
            eta = None
            if view is not None and view.predictor is not None:
                try:
                    eta = view.predictor.estimate().to_dict()
                except OdsError:
                    eta = None
            params = run.params.to_dict() if run is not None else (
                e.job.get("params") if isinstance(e.job.get("params"), dict) else None)
            jobs.append(JobHealth(e.job_id, e.state, view.committed if view else 0,
                                  run.last_mbps if run is not None else 0.0, params, eta))
        return cls(now_ms(), time.monotonic() - svc.started, tuple(jobs), svc.health())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["jobs"] = [asdict(j) for j in self.jobs]
        return d
