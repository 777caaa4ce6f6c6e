"""Throughput and delivery-time estimation for running and queued jobs.

Observations are per-window rates (Mbps). The rate estimate is an EWMA over
windows, blended with an optional prior whose weight decays as 1/(1+n)
after n windows. Uncertainty is an exponentially weighted variance of the
one-step-ahead residuals; a parameter change multiplies it by 4 instead of
discarding history.
"""
from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass

from .errors import InsufficientDataError, ValidationError

ALPHA = 0.3
WINDOW_S = 1.0
Z90 = 1.645                 # two-sided 90%
INIT_REL_SIGMA = 0.1
PARAM_INFLATION = 4.0
MIN_RATE_FRACTION = 0.01    # pessimistic bound never assumes a rate below 1% of the estimate


@dataclass(frozen=True)
class ETAEstimate:
    expected_completion: int        # epoch ms
    expected_throughput: float      # Mbps
    confidence_low: int             # epoch ms
    confidence_high: int            # epoch ms
    basis: str                      # model | observed | blended
    remaining: int = 0              # bytes

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class RateModel:
    """EWMA level plus residual variance over window observations."""

    def __init__(self, alpha: float = ALPHA):
        self.alpha = alpha
        self.level: float | None = None
        self.var = 0.0
        self.n = 0

    def update(self, x: float) -> None:
        a = self.alpha
        if self.level is None:
            self.level = x
            self.var = (INIT_REL_SIGMA * x) ** 2
        else:
            r = x - self.level
            self.var = a * r * r + (1 - a) * self.var
            self.level = a * x + (1 - a) * self.level
        self.n += 1

    def inflate(self, factor: float = PARAM_INFLATION) -> None:
        self.var *= factor

    def blend(self, prior: float | None) -> tuple[float, float, str]:
        """(rate, sigma, basis) after mixing in ``prior``."""
        if self.level is None:
            if prior is None:
                raise InsufficientDataError("no observations and no prior")
            return prior, INIT_REL_SIGMA * prior, "model"
        if prior is None:
            return self.level, math.sqrt(self.var), "observed"
        w = 1.0 / (1 + self.n)
        return w * prior + (1 - w) * self.level, math.sqrt(self.var), "blended"


def _eta(remaining: int, model: RateModel, prior: float | None, now_ms: int) -> ETAEstimate:
    if remaining < 0:
        raise ValidationError("remaining must be >= 0", fields=["remaining"])
    if remaining == 0:
        try:
            rate, _, basis = model.blend(prior)
        except InsufficientDataError:
            rate, basis = 0.0, "observed"
        return ETAEstimate(now_ms, rate, now_ms, now_ms, basis, 0)
    rate, sigma, basis = model.blend(prior)
    if not rate > 0:
        raise InsufficientDataError("estimated throughput is not positive", rate=rate)
    bits = remaining * 8
    hi_rate = rate + Z90 * sigma
    lo_rate = max(rate - Z90 * sigma, MIN_RATE_FRACTION * rate)
    expected = now_ms + bits / (rate * 1e6) * 1000
    low = now_ms + bits / (hi_rate * 1e6) * 1000
    high = now_ms + bits / (lo_rate * 1e6) * 1000
    return ETAEstimate(round(expected), rate, math.floor(low), math.ceil(high), basis, remaining)


def estimate_eta(remaining: int, history, prior: float | None = None,
                 now_ms: int | None = None) -> ETAEstimate:
    """ETA for ``remaining`` bytes from per-window ``history`` of (t ms, Mbps).

    ``now_ms`` defaults to the last observation time, or the wall clock when
    there is no history.
    """
    model = RateModel()
    last_t = None
    for t, mbps in history:
        model.update(float(mbps))
        last_t = t
    if now_ms is None:
        now_ms = int(last_t) if last_t is not None else int(time.time() * 1000)
    return _eta(int(remaining), model, prior, int(now_ms))


class JobPredictor:
    """Per-job estimator fed by relay progress events.

    Events need ``t`` (s on the job clock), ``committed`` (cumulative bytes)
    and ``kind``. Events in the same window merge; when a later window
    starts, the closed window becomes one observation whose rate is the byte
    delta over the time since the previous closed window. Estimates are in
    epoch ms relative to ``t0_ms``, the epoch time of job-clock zero.
    """

    def __init__(self, job_id: str, total_bytes: int, prior: float | None = None,
                 t0_ms: int | None = None, committed: int = 0, window_s: float = WINDOW_S):
        self.job_id = job_id
        self.total = total_bytes
        self.prior = prior
        self.t0_ms = int(time.time() * 1000) if t0_ms is None else t0_ms
        self.window_s = window_s
        self.model = RateModel()
        self.out_of_order = 0
        self.history: list = []            # (t ms, Mbps) per closed window
        self._lock = threading.Lock()
        self._last_t = 0.0
        self._closed = (0.0, committed)    # (t s, committed bytes) at last window close
        self._pending: tuple | None = None
        self._window: int | None = None
        self.committed = committed
        self.finished_at: int | None = None

    def _window_of(self, t: float) -> int:
        return math.floor(t / self.window_s + 1e-9)

    def on_progress(self, ev) -> None:
        with self._lock:
            t = float(ev.t)
            if t < self._last_t:
                self.out_of_order += 1
                return
            self._last_t = t
            if getattr(ev, "total", 0):
                self.total = int(ev.total)
            if ev.kind == "params":
                self.model.inflate()
                return
            committed = int(ev.committed)
            if committed < self.committed:
                self.out_of_order += 1
                return
            self.committed = committed
            if ev.kind == "done":
                self.finished_at = self.t0_ms + round(t * 1000)
            w = self._window_of(t)
            if self._window is not None and w > self._window:
                self._close()
            self._window = w
            self._pending = (t, committed)

    def _close(self) -> None:
        t, b = self._pending
        t0, b0 = self._closed
        if t > t0:
            mbps = (b - b0) * 8 / (t - t0) / 1e6
            self.model.update(mbps)
            self.history.append((self.t0_ms + round(t * 1000), mbps))
        self._closed = (t, b)

    def estimate(self) -> ETAEstimate:
        with self._lock:
            if self.finished_at is not None:
                f = self.finished_at
                rate = self.model.level or self.prior or 0.0
                return ETAEstimate(f, rate, f, f, "observed", 0)
            now = self.t0_ms + round(self._last_t * 1000)
            return _eta(max(self.total - self.committed, 0), self.model, self.prior, now)

    @property
    def windows(self) -> int:
        return self.model.n


def predicted_duration(total_bytes: int, prior_mbps: float | None) -> float | None:
    """Seconds to move ``total_bytes`` at the prior rate, or None without a prior."""
    if prior_mbps is None or not prior_mbps > 0:
        return None
    return total_bytes * 8 / (prior_mbps * 1e6)
