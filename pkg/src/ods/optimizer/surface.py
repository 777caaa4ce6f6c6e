"""Throughput surfaces over the (cc, p, pp) parameter grid."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..errors import SparseDataError, ValidationError
from ..params import ParamVector
from .spline import TensorSpline3D

AXES = ("cc", "p", "pp")
MIN_KNOTS = 4
BASIN_FRACTION = 0.95
PLATEAU_RTOL = 1e-9


@dataclass
class ThroughputSurface:
    axes: tuple                     # three tuples of strictly increasing integer knots
    values: np.ndarray              # aggregated knot throughputs, Mbps
    regime: str = "offpeak"
    maxima: list = field(default_factory=list)   # [(ParamVector, Mbps)], descending
    basins: list = field(default_factory=list)   # [(lo ParamVector, hi ParamVector)] per maximum
    n_records: int = 0

    def __post_init__(self):
        self.axes = tuple(tuple(int(v) for v in a) for a in self.axes)
        self.values = np.asarray(self.values, dtype=float)
        self._spline = TensorSpline3D(self.axes, self.values)

    @property
    def spline(self) -> TensorSpline3D:
        return self._spline

    @property
    def lower(self) -> ParamVector:
        return ParamVector(*(a[0] for a in self.axes))

    @property
    def upper(self) -> ParamVector:
        return ParamVector(*(a[-1] for a in self.axes))

    def contains(self, point) -> bool:
        return all(a[0] <= x <= a[-1] for a, x in zip(self.axes, _coords(point)))

    def __call__(self, points) -> np.ndarray:
        return self._spline(points)

    def predict(self, params) -> float:
        return float(self._spline([_coords(params)])[0])

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "axes": {name: list(a) for name, a in zip(AXES, self.axes)},
            "values": self.values.tolist(),
            "maxima": [{"params": pv.to_dict(), "throughput": th} for pv, th in self.maxima],
            "basins": [{"lo": lo.to_dict(), "hi": hi.to_dict()} for lo, hi in self.basins],
            "n_records": self.n_records,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ThroughputSurface":
        return cls(
            axes=tuple(d["axes"][n] for n in AXES),
            values=np.asarray(d["values"]),
            regime=d.get("regime", "offpeak"),
            maxima=[(ParamVector.from_dict(m["params"]), float(m["throughput"])) for m in d.get("maxima", [])],
            basins=[(ParamVector.from_dict(b["lo"]), ParamVector.from_dict(b["hi"])) for b in d.get("basins", [])],
            n_records=d.get("n_records", 0),
        )


def _coords(point):
    if isinstance(point, ParamVector):
        return point.as_tuple()
    return tuple(point)


def aggregate_knots(logs, regime: str | None = None):
    """Median throughput per (cc, p, pp) cell on the rectilinear grid of observed values.

    Returns ``(axes, values, n_records)`` where unobserved cells are filled from
    the nearest observed cell (Euclidean distance in knot-index space).
    """
    rows = [r for r in logs if regime is None or r.load_regime == regime]
    cells: dict[tuple, list] = {}
    for r in rows:
        cells.setdefault((r.cc, r.p, r.pp), []).append(r.observed_throughput)
    axes = []
    for d, name in enumerate(AXES):
        knots = sorted({k[d] for k in cells})
        if len(knots) < MIN_KNOTS:
            raise SparseDataError(
                f"axis {name!r} has {len(knots)} distinct knots, need >= {MIN_KNOTS}"
                + (f" (regime {regime!r})" if regime else ""),
                axis=name,
            )
        axes.append(tuple(knots))
    index = [{v: i for i, v in enumerate(a)} for a in axes]
    values = np.full([len(a) for a in axes], np.nan)
    for key, obs in cells.items():
        values[tuple(index[d][key[d]] for d in range(3))] = float(np.median(obs))
    missing = np.isnan(values)
    if missing.any():
        _, nearest = ndimage.distance_transform_edt(missing, return_indices=True)
        values = values[tuple(nearest)]
    return tuple(axes), values, len(rows)


def build_surface(logs, regime: str = "offpeak", grid_step: float = 1.0) -> ThroughputSurface:
    """Interpolate logged throughput for ``regime`` and extract its local maxima."""
    axes, values, n = aggregate_knots(logs, regime)
    surface = ThroughputSurface(axes, values, regime=regime, n_records=n)
    surface.maxima, surface.basins = _maxima_and_basins(surface, grid_step)
    return surface


def _dense_axes(surface: ThroughputSurface, step: float):
    out = []
    for a in surface.axes:
        lo, hi = a[0], a[-1]
        g = np.arange(lo, hi + step * 1e-9, step)
        if g[-1] < hi:
            g = np.append(g, hi)
        out.append(np.minimum(g, hi))
    return out


def local_maxima(surface: ThroughputSurface, grid_step: float = 1.0) -> list:
    """Local maxima of ``surface`` on a dense grid of spacing ``grid_step``.

    A dense point is a local maximum when it is >= all of its (up to 26)
    Moore neighbours. Connected plateaus merge into one entry reported at the
    lexicographically smallest parameter vector on the plateau top. Points are
    rounded to the nearest integer ParamVector inside the knot hull and
    returned sorted by predicted throughput, descending.
    """
    return _maxima_and_basins(surface, grid_step)[0]


def _maxima_and_basins(surface: ThroughputSurface, grid_step: float):
    if not grid_step > 0:
        raise ValidationError("grid_step must be > 0", fields=["grid_step"])
    gx, gy, gz = _dense_axes(surface, grid_step)
    vals = surface.spline.grid(gx, gy, gz)
    tol = PLATEAU_RTOL * max(float(np.max(np.abs(vals))), 1e-300)
    neigh = ndimage.maximum_filter(vals, size=3, mode="nearest")
    is_max = vals >= neigh - tol
    moore = np.ones((3, 3, 3), dtype=bool)
    labels, count = ndimage.label(is_max, structure=moore)

    found: dict[ParamVector, float] = {}
    peak_of: dict[ParamVector, tuple] = {}
    lo_hull, hi_hull = surface.lower.as_tuple(), surface.upper.as_tuple()
    for lab in range(1, count + 1):
        idx = np.argwhere(labels == lab)  # row-major, so lexicographic by coordinate
        comp_vals = vals[tuple(idx.T)]
        top = comp_vals.max()
        first = idx[np.flatnonzero(comp_vals >= top - tol)[0]]
        coord = (gx[first[0]], gy[first[1]], gz[first[2]])
        pv = ParamVector(*(int(min(max(round(c), lo), hi)) for c, lo, hi in zip(coord, lo_hull, hi_hull)))
        th = surface.predict(pv)
        if pv not in found or th > found[pv]:
            found[pv] = th
            peak_of[pv] = tuple(first)
    maxima = sorted(found.items(), key=lambda kv: (-kv[1], kv[0].as_tuple()))

    basins = []
    dense = (gx, gy, gz)
    for pv, _ in maxima:
        peak = peak_of[pv]
        region, _ = ndimage.label(vals >= BASIN_FRACTION * vals[peak], structure=moore)
        pts = np.argwhere(region == region[peak])
        lo = ParamVector(*(int(np.ceil(dense[d][pts[:, d].min()])) for d in range(3)))
        hi = ParamVector(*(int(np.floor(dense[d][pts[:, d].max()])) for d in range(3)))
        basins.append((lo, hi))
    return maxima, basins


def surface_argmax(surface: ThroughputSurface) -> tuple[ParamVector, float]:
    """Best integer ParamVector inside the hull, by exhaustive evaluation."""
    g = [np.arange(a[0], a[-1] + 1) for a in surface.axes]
    vals = surface.spline.grid(*g)
    i = np.unravel_index(int(np.argmax(vals)), vals.shape)
    return ParamVector(*(int(g[d][i[d]]) for d in range(3))), float(vals[i])
