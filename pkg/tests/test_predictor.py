import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ods import simnet
from ods.endpoint import ResourceURI
from ods.errors import InsufficientDataError, ValidationError
from ods.params import ParamVector
from ods.predictor import JobPredictor, estimate_eta, predicted_duration
from ods.relay import ProgressEvent, Relay, SimClock, TransferJob


def _ev(t, committed, kind="progress", total=10**9):
    return ProgressEvent("j", kind, t, committed, total)


def test_zero_remaining_is_now():
    e = estimate_eta(0, [(1000, 50.0)], now_ms=5000)
    assert e.expected_completion == e.confidence_low == e.confidence_high == 5000


def test_constant_rate_arithmetic():
    hist = [(1000 * i, 100.0) for i in range(1, 21)]
    e = estimate_eta(10**9, hist, now_ms=20_000)
    assert e.expected_completion == 20_000 + 80_000
    assert e.expected_throughput == pytest.approx(100.0)
    assert e.basis == "observed"


def test_no_data_no_prior():
    with pytest.raises(InsufficientDataError):
        estimate_eta(10, [], now_ms=0)
    with pytest.raises(ValidationError):
        estimate_eta(-1, [], prior=10.0, now_ms=0)


def test_prior_only_and_blend():
    e = estimate_eta(10**6, [], prior=8.0, now_ms=0)
    assert e.basis == "model" and e.expected_completion == 1000
    # one window: prior weight 1/2
    b = estimate_eta(10**6, [(0, 100.0)], prior=50.0, now_ms=0)
    assert b.basis == "blended" and b.expected_throughput == pytest.approx(75.0)
    # prior weight decays as 1/(1+n)
    c = estimate_eta(10**6, [(i, 100.0) for i in range(9)], prior=50.0, now_ms=0)
    assert c.expected_throughput == pytest.approx(0.1 * 50 + 0.9 * 100)


def test_ewma_level_oracle():
    xs = [10.0, 20.0, 5.0, 40.0]
    level = xs[0]
    for x in xs[1:]:
        level = 0.3 * x + 0.7 * level
    e = estimate_eta(10**6, list(enumerate(xs)), now_ms=0)
    assert e.expected_throughput == pytest.approx(level)


def test_same_window_events_merge():
    p = JobPredictor("j", 10**9, t0_ms=0)
    p.on_progress(_ev(0.2, 1_000_000))
    p.on_progress(_ev(0.9, 2_500_000))
    assert p.windows == 0
    p.on_progress(_ev(1.1, 3_000_000))
    assert p.windows == 1
    # one observation: bytes through t=0.9 over 0.9 s
    assert p.history[0][1] == pytest.approx(2_500_000 * 8 / 0.9 / 1e6)


def test_params_event_widens_interval():
    p = JobPredictor("j", 10**9, t0_ms=0)
    for i in range(1, 15):
        p.on_progress(_ev(i, i * 12_500_000))
    before = p.estimate()
    p.on_progress(ProgressEvent("j", "params", 14.0, 14 * 12_500_000, 10**9, params=ParamVector(2, 2, 2)))
    after = p.estimate()
    assert after.expected_completion == before.expected_completion
    assert (after.confidence_high - after.confidence_low) > (before.confidence_high - before.confidence_low)


def test_interval_shrinks_after_window_ten():
    rate = 100.0                     # Mbps
    step = int(rate * 1e6 / 8)       # bytes per 1 s window
    total = 120 * step
    p = JobPredictor("j", total, t0_ms=0)
    widths = []
    for i in range(1, 101):
        p.on_progress(_ev(i, i * step, total=total))
        n = p.windows
        if n == 0:
            continue
        e = p.estimate()
        # oracle: zero residuals, so var = (0.1 x)^2 * 0.7^(n - 1)
        sigma = 0.1 * rate * math.sqrt(0.7 ** (n - 1))
        bits = (total - i * step) * 8
        lo = bits / ((rate + 1.645 * sigma) * 1e6) * 1000
        hi = bits / (max(rate - 1.645 * sigma, 0.01 * rate) * 1e6) * 1000
        assert e.confidence_low == math.floor(i * 1000 + lo)
        assert e.confidence_high == math.ceil(i * 1000 + hi)
        widths.append((n, e.confidence_high - e.confidence_low))
    tail = [w for n, w in widths if n >= 10]
    assert all(b <= a for a, b in zip(tail, tail[1:]))
    assert tail[-1] < tail[0]


def test_out_of_order_discarded():
    p = JobPredictor("j", 10**9, t0_ms=0)
    p.on_progress(_ev(2.0, 1000))
    p.on_progress(_ev(1.0, 2000))
    p.on_progress(_ev(2.5, 500))
    assert p.out_of_order == 2 and p.committed == 1000


def test_finished_job_eta_is_finish_time():
    p = JobPredictor("j", 100, t0_ms=1_000)
    p.on_progress(_ev(0.5, 50, total=100))
    p.on_progress(_ev(2.25, 100, kind="done", total=100))
    e = p.estimate()
    assert e.expected_completion == 3_250 == e.confidence_low == e.confidence_high


@given(st.lists(st.floats(1.0, 1000.0), min_size=1, max_size=40), st.integers(0, 10**10),
       st.none() | st.floats(1.0, 1000.0))
def test_interval_contains_point(rates, remaining, prior):
    e = estimate_eta(remaining, [(i * 1000, r) for i, r in enumerate(rates)], prior=prior,
                     now_ms=len(rates) * 1000)
    assert e.confidence_low <= e.expected_completion <= e.confidence_high
    if remaining:
        assert e.expected_throughput > 0


def test_predicted_duration():
    assert predicted_duration(10**9, 100.0) == pytest.approx(80.0)
    assert predicted_duration(10**9, None) is None


def _sim_run(memstores, tmp_path, load):
    src, dst = memstores("psrc"), memstores("pdst")
    size = 200 * 2**20
    src.put("/f", bytes(size))
    link = simnet.LinkModel(capacity=100, rtt=20, buffer=12_500_000, command_rtt=5)
    job = TransferJob(ResourceURI.parse(f"mem://{src.name}/"), ResourceURI.parse(f"mem://{dst.name}/"),
                      ("f",), ParamVector(1, 4, 1))
    pred = JobPredictor(job.job_id, size, t0_ms=0)
    ests = []

    def cb(ev):
        n = pred.windows
        pred.on_progress(ev)
        if pred.windows > n:
            ests.append((ev.t, pred.windows, pred.estimate()))

    out = Relay(tmp_path / "j", chunk_size=2**20).execute(
        job, progress=cb, clock=SimClock(link, load, noise=0.02, seed=3))
    return out.duration * 1000, ests


def test_steady_sim_error_and_monotone_eta(memstores, tmp_path):
    T, ests = _sim_run(memstores, tmp_path, simnet.LoadProfile())
    later = [(t, e) for t, n, e in ests if n >= 10]
    assert later
    for t, e in later:
        assert abs(e.expected_completion - T) / (T - t * 1000) <= 0.05
    left = [e.expected_completion - t * 1000 for t, _, e in ests]
    assert all(b < a for a, b in zip(left, left[1:]))
