import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from ods.errors import DegenerateSamplesError, FitInfeasibleError, ValidationError
from ods.optimizer import fit_stream_model, optimal_streams
from ods.optimizer.stream_model import StreamModelFit

from oracles import stream_model_argmax


def th(a, b, c, n):
    return n / math.sqrt(a * n ** c + b)


def test_recovers_known_coefficients():
    a, b, c = 2e-4, 1e-2, 2.5
    fit = fit_stream_model([(n, th(a, b, c, n)) for n in (1, 4, 16)])
    assert fit.a == pytest.approx(a, rel=1e-6)
    assert fit.b == pytest.approx(b, rel=1e-6)
    assert fit.c == pytest.approx(c, rel=1e-6)


def test_sample_order_does_not_matter():
    pts = [(n, th(1e-3, 0.5, 3.0, n)) for n in (2, 8, 5)]
    f1, f2 = fit_stream_model(pts), fit_stream_model(pts[::-1])
    assert f1.c == pytest.approx(f2.c, rel=1e-9)


@given(a=st.floats(1e-5, 1e-1), b=st.floats(1e-3, 10.0), c=st.floats(2.05, 4.0))
def test_fit_reproduces_samples(a, b, c):
    pts = [(n, th(a, b, c, n)) for n in (1, 3, 9)]
    fit = fit_stream_model(pts)
    for n, v in pts:
        assert fit(n) == pytest.approx(v, rel=1e-6)


@given(a=st.floats(1e-5, 1e-1), b=st.floats(1e-3, 10.0), c=st.floats(2.05, 4.0), n_max=st.integers(1, 300))
def test_optimal_streams_matches_exhaustive(a, b, c, n_max):
    fit = StreamModelFit(a, b, c)
    assert optimal_streams(fit, n_max) == stream_model_argmax(a, b, c, n_max)


def test_monotone_model_picks_upper_end():
    assert optimal_streams(StreamModelFit(1e-3, 1.0, 1.5), 50) == 50


def test_degenerate_linear_samples():
    with pytest.raises(DegenerateSamplesError):
        fit_stream_model([(1, 10.0), (2, 20.0), (4, 40.0)])


def test_infeasible_samples():
    with pytest.raises((FitInfeasibleError, DegenerateSamplesError)):
        fit_stream_model([(1, 10.0), (2, 5.0), (4, 30.0)])


def test_bad_inputs():
    with pytest.raises(ValidationError):
        fit_stream_model([(1, 10.0), (1, 12.0), (4, 30.0)])
    with pytest.raises(ValidationError):
        optimal_streams(StreamModelFit(1, 1, 3), 0)
