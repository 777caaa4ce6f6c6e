import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from ods.errors import SparseDataError
from ods.optimizer import build_surface, local_maxima, surface_argmax
from ods.optimizer.spline import NaturalCubicSpline1D, TensorSpline3D
from ods.optimizer.surface import ThroughputSurface
from ods.params import ParamVector
from ods.records import TransferLogRecord


def rec(cc, p, pp, th, regime="offpeak"):
    return TransferLogRecord("a", "b", 50.0, 1000.0, 10, 1e6, 10**7, cc, p, pp, th, 0, regime)


def scipy_tensor(axes, values, pts):
    """Separable natural-spline interpolation, one axis at a time, via scipy."""
    out = []
    for x, y, z in pts:
        v = values
        for ax, q in zip(axes, (x, y, z)):
            v = CubicSpline(ax, v, axis=0, bc_type="natural")(q)
        out.append(float(v))
    return np.array(out)


@given(st.lists(st.floats(-100, 100), min_size=5, max_size=5), st.floats(0, 1))
def test_1d_matches_scipy_natural(vals, frac):
    x = np.array([1.0, 2.0, 4.0, 7.0, 8.0])
    q = x[0] + frac * (x[-1] - x[0])
    ours = NaturalCubicSpline1D(x)(np.array(vals), [q])[0]
    ref = CubicSpline(x, vals, bc_type="natural")(q)
    assert ours == pytest.approx(float(ref), abs=1e-9 * (1 + max(map(abs, vals))))


def test_tensor_matches_scipy_separable():
    rng = np.random.default_rng(3)
    axes = ((1, 2, 4, 8), (1, 3, 5, 6, 9), (1, 2, 3, 4))
    values = rng.uniform(10, 100, (4, 5, 4))
    pts = rng.uniform([1, 1, 1], [8, 9, 4], (40, 3))
    np.testing.assert_allclose(TensorSpline3D(axes, values)(pts), scipy_tensor(axes, values, pts), rtol=1e-10)


def test_knots_reproduced_exactly():
    rng = np.random.default_rng(1)
    axes = ((1, 2, 4, 8), (1, 2, 3, 4), (1, 4, 8, 16))
    logs = [rec(a, b, c, float(rng.uniform(1, 900))) for a, b, c in itertools.product(*axes)]
    s = build_surface(logs)
    for r in logs:
        assert s.predict(r.params) == pytest.approx(r.observed_throughput, rel=1e-12)


def test_median_aggregation_of_repeats():
    axes = ((1, 2, 3, 4),) * 3
    logs = [rec(a, b, c, 100.0) for a, b, c in itertools.product(*axes)]
    logs += [rec(2, 2, 2, 400.0), rec(2, 2, 2, 130.0)]
    s = build_surface(logs)
    assert s.predict(ParamVector(2, 2, 2)) == pytest.approx(130.0)


def test_sparse_axis_names_axis():
    logs = [rec(a, b, 1, 10.0 * a * b) for a in (1, 2, 3, 4) for b in (1, 2, 3, 4)]
    with pytest.raises(SparseDataError) as ei:
        build_surface(logs)
    assert ei.value.axis == "pp"


def test_regime_partition():
    axes = ((1, 2, 3, 4),) * 3
    logs = [rec(a, b, c, 50.0, "peak") for a, b, c in itertools.product(*axes)]
    with pytest.raises(SparseDataError):
        build_surface(logs, "offpeak")
    assert build_surface(logs, "peak").regime == "peak"


def test_maxima_of_known_bumps():
    axes = tuple(tuple(range(1, 13)) for _ in range(3))
    def f(x, y, z):
        return (100 * np.exp(-((x - 3) ** 2 + (y - 3) ** 2 + (z - 3) ** 2) / 2)
                + 80 * np.exp(-((x - 10) ** 2 + (y - 10) ** 2 + (z - 9) ** 2) / 2) + 1)
    vals = np.array([[[f(x, y, z) for z in axes[2]] for y in axes[1]] for x in axes[0]])
    s = ThroughputSurface(axes, vals)
    found = [pv.as_tuple() for pv, _ in local_maxima(s)]
    assert found[:2] == [(3, 3, 3), (10, 10, 9)]
    assert surface_argmax(s)[0] == ParamVector(3, 3, 3)


def test_plateau_reports_one_maximum():
    axes = ((1, 2, 3, 4),) * 3
    vals = np.full((4, 4, 4), 50.0)
    maxima = local_maxima(ThroughputSurface(axes, vals))
    assert len(maxima) == 1
    assert maxima[0][0] == ParamVector(1, 1, 1)


def test_json_round_trip():
    axes = ((1, 2, 4, 8),) * 3
    logs = [rec(a, b, c, float(a * 10 + b - c)) for a, b, c in itertools.product(*axes)]
    s = build_surface(logs)
    again = ThroughputSurface.from_dict(s.to_dict())
    assert again.maxima == s.maxima
    assert again.predict((3, 5, 7)) == pytest.approx(s.predict((3, 5, 7)))


def test_query_outside_hull_rejected():
    axes = ((1, 2, 3, 4),) * 3
    s = ThroughputSurface(axes, np.ones((4, 4, 4)))
    with pytest.raises(ValueError):
        s.predict((5, 1, 1))
