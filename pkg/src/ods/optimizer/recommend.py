"""Offline parameter recommendation from historical logs."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from ..errors import ColdStartError, SparseDataError, ValidationError
from ..params import ParamVector
from .surface import ThroughputSurface, build_surface


@dataclass(frozen=True)
class LinkFeatures:
    rtt: float              # ms
    bandwidth: float        # Mbps
    avg_file_size: float    # bytes
    total_size: float = 0.0
    regime: str | None = None

    def __post_init__(self):
        bad = [n for n in ("rtt", "bandwidth", "avg_file_size") if not getattr(self, n) > 0]
        if bad:
            raise ValidationError(f"features must be positive: {', '.join(bad)}", fields=bad)

    def vector(self) -> np.ndarray:
        return np.log([self.rtt, self.bandwidth, self.avg_file_size])

    @classmethod
    def of_record(cls, r) -> "LinkFeatures":
        return cls(r.rtt, r.bandwidth, max(r.avg_file_size, 1.0), r.total_size, r.load_regime)


@dataclass
class Recommendation:
    params: ParamVector
    predicted: float
    basis: str = "offline"
    neighbors: list = field(default_factory=list)   # context keys, nearest first

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "predicted_throughput": self.predicted,
                "basis": self.basis, "neighbors": [list(map(str, k)) for k in self.neighbors]}


class Regressor(Protocol):
    def recommend(self, features: LinkFeatures, store) -> Recommendation: ...


class KNNRegressor:
    """k nearest historical link contexts, best surface maximum among them.

    A context is a group of records sharing every non-tunable field (hosts,
    link, dataset shape, regime). Distance is Euclidean over z-scored
    (log rtt, log bandwidth, log avg file size).
    """

    def __init__(self, k: int = 5, grid_step: float = 1.0):
        self.k = k
        self.grid_step = grid_step
        self._cache: dict = {}
        self._cache_version = None
        self._lock = threading.Lock()

    def contexts(self, store) -> dict:
        """Context key -> (features, surface) for every context with a buildable surface."""
        with self._lock:
            if self._cache_version == (id(store), store.version):
                return self._cache
            groups: dict = {}
            for r in store.snapshot():
                groups.setdefault(r.context_key(), []).append(r)
            out = {}
            for key, recs in groups.items():
                try:
                    surf = build_surface(recs, recs[0].load_regime, self.grid_step)
                except SparseDataError:
                    continue
                out[key] = (LinkFeatures.of_record(recs[0]), surf)
            self._cache, self._cache_version = out, (id(store), store.version)
            return out

    def neighbors(self, features: LinkFeatures, store) -> list:
        ctx = self.contexts(store)
        if not ctx:
            raise ColdStartError("no historical contexts with enough data; sample instead")
        keys = list(ctx)
        if features.regime is not None:
            same = [k for k in keys if ctx[k][0].regime == features.regime]
            keys = same or keys
        X = np.array([ctx[k][0].vector() for k in keys])
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        d = np.linalg.norm((X - mu) / sd - (features.vector() - mu) / sd, axis=1)
        order = sorted(range(len(keys)), key=lambda i: (d[i], keys[i]))
        return [(keys[i], float(d[i]), ctx[keys[i]][1]) for i in order[: self.k]]

    def recommend(self, features: LinkFeatures, store) -> Recommendation:
        if len(store) == 0:
            raise ColdStartError("log store is empty; sample instead")
        near = self.neighbors(features, store)
        best = None
        for key, _, surf in near:
            for pv, th in surf.maxima:
                if best is None or th > best[1]:
                    best = (pv, th)
        if best is None or not math.isfinite(best[1]):
            raise ColdStartError("neighbouring surfaces report no maxima")
        return Recommendation(best[0], best[1], "offline", [k for k, _, _ in near])


DEFAULT_REGRESSOR = KNNRegressor()


def offline_recommend(features: LinkFeatures, store, regressor: Regressor | None = None) -> ParamVector:
    return (regressor or DEFAULT_REGRESSOR).recommend(features, store).params


def nearest_surface(features: LinkFeatures, store, regressor: KNNRegressor | None = None) -> ThroughputSurface:
    return (regressor or DEFAULT_REGRESSOR).neighbors(features, store)[0][2]
