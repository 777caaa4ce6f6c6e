"""Natural cubic splines on rectilinear grids.

A natural spline is linear in its knot values, so each axis is reduced to a
matrix of cardinal basis functions: ``basis(x) @ values`` interpolates. The
tensor-product interpolant over a 3-D grid is then a triple contraction of
per-axis basis rows against the knot array.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


class NaturalCubicSpline1D:
    """Cardinal natural cubic spline basis on strictly increasing knots ``x``.

    Parameters
    ----------
    x : (n,) array_like
        Knot positions, strictly increasing, n >= 2.

    Notes
    -----
    ``self.m`` holds the knot second derivatives of each cardinal function
    (column ``j`` is the spline through the unit vector ``e_j``), obtained
    from the standard tridiagonal system with zero end curvature.
    """

    def __init__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("need at least two knots")
        h = np.diff(x)
        if np.any(h <= 0):
            raise ValueError("knots must be strictly increasing")
        self.x = x
        self.h = h
        n = x.size
        m = np.zeros((n, n))
        if n > 2:
            # rows i=1..n-2:  h[i-1] M[i-1] + 2(h[i-1]+h[i]) M[i] + h[i] M[i+1] = 6 (d[i] - d[i-1])
            k = n - 2
            ab = np.zeros((3, k))
            ab[0, 1:] = h[1:-1]
            ab[1, :] = 2 * (h[:-1] + h[1:])
            ab[2, :-1] = h[1:-1]
            rhs = np.zeros((k, n))
            for i in range(1, n - 1):
                rhs[i - 1, i - 1] += 6 / h[i - 1]
                rhs[i - 1, i] -= 6 / h[i - 1] + 6 / h[i]
                rhs[i - 1, i + 1] += 6 / h[i]
            m[1:-1, :] = solve_banded((1, 1), ab, rhs)
        self.m = m

    def basis(self, xq) -> np.ndarray:
        """Rows of cardinal-function values at ``xq``; shape ``(len(xq), n)``."""
        xq = np.atleast_1d(np.asarray(xq, dtype=float))
        x, h = self.x, self.h
        if np.any(xq < x[0]) or np.any(xq > x[-1]):
            raise ValueError(f"query outside knot hull [{x[0]}, {x[-1]}]")
        n = x.size
        i = np.clip(np.searchsorted(x, xq, side="right") - 1, 0, n - 2)
        hi = h[i]
        a = (x[i + 1] - xq) / hi
        b = (xq - x[i]) / hi
        out = np.zeros((xq.size, n))
        rows = np.arange(xq.size)
        out[rows, i] += a
        out[rows, i + 1] += b
        ca = (a ** 3 - a) * hi ** 2 / 6
        cb = (b ** 3 - b) * hi ** 2 / 6
        out += ca[:, None] * self.m[i, :] + cb[:, None] * self.m[i + 1, :]
        # exact reproduction at knots
        on_knot = (a == 1.0) | (b == 1.0)
        if np.any(on_knot):
            k = np.where(b == 1.0, i + 1, i)[on_knot]
            out[on_knot] = 0.0
            out[np.flatnonzero(on_knot), k] = 1.0
        return out

    def __call__(self, values, xq) -> np.ndarray:
        return self.basis(xq) @ np.asarray(values, dtype=float)


class TensorSpline3D:
    """Tensor-product natural cubic spline over a rectilinear 3-D grid."""

    def __init__(self, axes, values):
        if len(axes) != 3:
            raise ValueError("expected three axes")
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != tuple(a.size for a in self.axes):
            raise ValueError(f"values shape {self.values.shape} does not match axes")
        self.splines = [NaturalCubicSpline1D(a) for a in self.axes]

    def __call__(self, points) -> np.ndarray:
        """Evaluate at an ``(m, 3)`` array of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        bx, by, bz = (s.basis(pts[:, d]) for d, s in enumerate(self.splines))
        return np.einsum("mi,mj,mk,ijk->m", bx, by, bz, self.values, optimize=True)

    def grid(self, gx, gy, gz) -> np.ndarray:
        """Evaluate on the outer product of three 1-D coordinate vectors."""
        bx, by, bz = (s.basis(g) for s, g in zip(self.splines, (gx, gy, gz)))
        return np.einsum("ai,bj,ck,ijk->abc", bx, by, bz, self.values, optimize=True)
