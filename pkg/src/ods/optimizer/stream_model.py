"""Three-sample parallel stream model.

Aggregate throughput as a function of total stream count ``n`` is modelled as

    Th(n) = n / sqrt(a * n**c + b)

Squaring and inverting gives ``n**2 / Th**2 = a * n**c + b``, so three
samples pin down ``c`` through a ratio of differences that does not involve
``a`` or ``b``; ``a`` and ``b`` then follow by linear elimination.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import DegenerateSamplesError, FitInfeasibleError, ValidationError

C_MAX = 10.0
C_MIN = 1e-9
REPRO_TOL = 1e-6
TIE_TOL = 1e-12


@dataclass(frozen=True)
class StreamModelFit:
    a: float
    b: float
    c: float

    def __call__(self, n: float) -> float:
        return n / math.sqrt(self.a * n ** self.c + self.b)

    def stationary_point(self) -> float | None:
        """Real-valued maximiser of Th, or None when Th is monotone."""
        if self.c <= 2 or self.b <= 0:
            return None
        return (2 * self.b / (self.a * (self.c - 2))) ** (1 / self.c)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c}


def _pow_diff(x: float, y: float, c: float) -> float:
    # x**c - y**c without cancellation for small c
    return y ** c * math.expm1(c * math.log(x / y))


def _ratio(n1: float, n2: float, n3: float, c: float) -> float:
    return _pow_diff(n1, n2, c) / _pow_diff(n2, n3, c)


def fit_stream_model(samples) -> StreamModelFit:
    """Fit ``(a, b, c)`` exactly through three ``(n, throughput)`` samples.

    Raises
    ------
    DegenerateSamplesError
        all three transformed values coincide (throughput exactly linear in n)
    FitInfeasibleError
        no exponent in (0, 10] is consistent with the samples, or the
        implied ``a``/``b`` are out of domain
    """
    samples = list(samples)
    if len(samples) != 3:
        raise ValidationError("exactly three samples are required", fields=["samples"])
    pts = sorted((float(n), float(th)) for n, th in samples)
    ns = [n for n, _ in pts]
    if any(n <= 0 for n in ns) or len(set(ns)) != 3:
        raise ValidationError("stream counts must be distinct and positive", fields=["samples"])
    if any(not th > 0 for _, th in pts):
        raise ValidationError("throughputs must be positive", fields=["samples"])

    n1, n2, n3 = ns
    y1, y2, y3 = (n * n / (th * th) for n, th in pts)
    scale = max(abs(y1), abs(y2), abs(y3))
    if abs(y1 - y2) <= TIE_TOL * scale and abs(y2 - y3) <= TIE_TOL * scale:
        raise DegenerateSamplesError("samples are exactly proportional to n; no saturation observed")
    if y2 == y3:
        raise FitInfeasibleError("samples admit no finite exponent")
    r = (y1 - y2) / (y2 - y3)

    # g(c) = (n1^c - n2^c) / (n2^c - n3^c) is positive and decreasing in c
    lo, hi = C_MIN, C_MAX
    f_lo = _ratio(n1, n2, n3, lo) - r
    f_hi = _ratio(n1, n2, n3, hi) - r
    if f_lo == 0:
        hi = lo
    elif f_hi == 0:
        lo = hi
    elif (f_lo > 0) == (f_hi > 0):
        raise FitInfeasibleError(f"no exponent in (0, {C_MAX}] matches the samples", ratio=r)
    for _ in range(200):
        if hi - lo <= 4e-16 * hi:
            break
        mid = 0.5 * (lo + hi)
        f_mid = _ratio(n1, n2, n3, mid) - r
        if f_mid == 0:
            lo = hi = mid
            break
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)

    a = (y2 - y3) / _pow_diff(n2, n3, c)
    b = y3 - a * n3 ** c
    if abs(b) <= 1e-12 * scale:
        b = 0.0
    if not a > 0 or b < 0:
        raise FitInfeasibleError("fitted coefficients out of domain", a=a, b=b, c=c)
    fit = StreamModelFit(a, b, c)
    for n, th in pts:
        if abs(fit(n) - th) > REPRO_TOL * th:
            raise FitInfeasibleError("fit does not reproduce the samples", a=a, b=b, c=c)
    return fit


def optimal_streams(fit: StreamModelFit, n_max: int) -> int:
    """Smallest integer ``n`` in ``[1, n_max]`` whose throughput ties the maximum.

    Th is unimodal (increasing, then decreasing when c > 2), so the maximum is
    at a neighbour of the stationary point or at an end, and the tie set is a
    contiguous run that binary search can locate on the rising side.
    """
    if n_max < 1:
        raise ValidationError("n_max must be >= 1", fields=["n_max"])
    cands = {1, n_max}
    x = fit.stationary_point()
    if x is not None and 1 <= x <= n_max:
        cands.update((math.floor(x), math.ceil(x)))
    best_n = max(cands, key=lambda n: (fit(n), -n))
    best = fit(best_n)
    floor_val = best * (1 - TIE_TOL)
    lo, hi = 1, best_n
    while lo < hi:
        mid = (lo + hi) // 2
        if fit(mid) >= floor_val:
            hi = mid
        else:
            lo = mid + 1
    return lo
