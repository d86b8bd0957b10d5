"""Uniform belief grids with linear interpolation weights.

Three domains are supported:

* ``interval``: [0, 1], piecewise-linear interpolation.
* ``square``: [0, 1]^2, bilinear interpolation; node (i, j) has flat index
  ``i * n + j`` and coordinates ``(i h, j h)``.
* ``simplex``: {p, q >= 0, p + q <= 1}, barycentric interpolation on the
  triangulation that splits each grid cell along its anti-diagonal.

All weights are non-negative and sum to one, so the interpolated Bellman
operator stays a sup-norm contraction.
"""

from __future__ import annotations

import numpy as np


class Grid:
    domain: str
    dim: int

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("grid resolution must be >= 2")
        self.n = int(n)
        self.h = 1.0 / (self.n - 1)

    @property
    def size(self) -> int:
        return len(self.points)

    def interpolate(self, values: np.ndarray, points) -> np.ndarray:
        idx, w = self.weights(points)
        return (values[idx] * w).sum(axis=-1)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n})"


class IntervalGrid(Grid):
    domain = "interval"
    dim = 1

    def __init__(self, n: int):
        super().__init__(n)
        self.points = np.linspace(0.0, 1.0, self.n)[:, None]

    def _split(self, x):
        u = np.clip(np.asarray(x, dtype=float), 0.0, 1.0) * (self.n - 1)
        i = np.minimum(np.floor(u).astype(int), self.n - 2)
        return i, u - i

    def weights(self, points):
        x = np.asarray(points, dtype=float).reshape(-1)
        i, t = self._split(x)
        return np.stack([i, i + 1], axis=-1), np.stack([1.0 - t, t], axis=-1)

    def nearest(self, points) -> np.ndarray:
        x = np.clip(np.asarray(points, dtype=float).reshape(-1), 0.0, 1.0)
        return np.rint(x * (self.n - 1)).astype(int)


class SquareGrid(Grid):
    domain = "square"
    dim = 2

    def __init__(self, n: int):
        super().__init__(n)
        ax = np.linspace(0.0, 1.0, self.n)
        pp, qq = np.meshgrid(ax, ax, indexing="ij")
        self.points = np.column_stack([pp.ravel(), qq.ravel()])

    def weights(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        u = np.clip(pts[:, 0], 0.0, 1.0) * (self.n - 1)
        v = np.clip(pts[:, 1], 0.0, 1.0) * (self.n - 1)
        i = np.minimum(np.floor(u).astype(int), self.n - 2)
        j = np.minimum(np.floor(v).astype(int), self.n - 2)
        s, t = u - i, v - j
        n = self.n
        idx = np.stack([i * n + j, (i + 1) * n + j, i * n + j + 1, (i + 1) * n + j + 1], axis=-1)
        w = np.stack([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t], axis=-1)
        return idx, w

    def nearest(self, points) -> np.ndarray:
        pts = np.clip(np.atleast_2d(np.asarray(points, dtype=float)), 0.0, 1.0)
        i = np.rint(pts[:, 0] * (self.n - 1)).astype(int)
        j = np.rint(pts[:, 1] * (self.n - 1)).astype(int)
        return i * self.n + j

    def as_matrix(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).reshape(self.n, self.n)


class SimplexGrid(Grid):
    domain = "simplex"
    dim = 2

    def __init__(self, n: int):
        super().__init__(n)
        ii, jj = np.meshgrid(np.arange(self.n), np.arange(self.n), indexing="ij")
        keep = ii + jj <= self.n - 1
        self.ij = np.column_stack([ii[keep], jj[keep]])
        self.lookup = np.full((self.n, self.n), -1, dtype=np.int64)
        self.lookup[self.ij[:, 0], self.ij[:, 1]] = np.arange(len(self.ij))
        self.points = self.ij * self.h

    def _project(self, pts):
        pts = np.clip(np.atleast_2d(np.asarray(pts, dtype=float)), 0.0, 1.0)
        s = pts.sum(axis=1)
        over = s > 1.0
        if np.any(over):
            pts = pts.copy()
            pts[over] /= s[over, None]
        return pts

    def weights(self, points):
        pts = self._project(points)
        m = self.n - 1
        u, v = pts[:, 0] * m, pts[:, 1] * m
        i = np.minimum(np.floor(u).astype(int), m - 1)
        j = np.minimum(np.floor(v).astype(int), m - 1)
        # keep the base cell inside the simplex
        j = np.minimum(j, m - 1 - i)
        j = np.maximum(j, 0)
        i = np.minimum(i, m - 1 - j)
        fu, fv = u - i, v - j
        # boundary cells (i + j = m - 1) have no upper triangle
        upper = (fu + fv > 1.0) & (i + j < m - 1)
        L = self.lookup
        idx = np.empty((len(pts), 3), dtype=np.int64)
        w = np.empty((len(pts), 3))
        lo = ~upper
        idx[lo] = np.column_stack([L[i[lo], j[lo]], L[i[lo] + 1, j[lo]], L[i[lo], j[lo] + 1]])
        w[lo] = np.column_stack([1.0 - fu[lo] - fv[lo], fu[lo], fv[lo]])
        up = upper
        idx[up] = np.column_stack([L[i[up] + 1, j[up] + 1], L[i[up] + 1, j[up]], L[i[up], j[up] + 1]])
        w[up] = np.column_stack([fu[up] + fv[up] - 1.0, 1.0 - fv[up], 1.0 - fu[up]])
        w = np.clip(w, 0.0, None)
        w /= w.sum(axis=1, keepdims=True)
        return idx, w

    def nearest(self, points) -> np.ndarray:
        pts = self._project(points)
        m = self.n - 1
        u, v = pts[:, 0] * m, pts[:, 1] * m
        i, j = np.rint(u).astype(int), np.rint(v).astype(int)
        over = i + j > m
        # step back along the coordinate that was rounded up the most
        back_i = over & ((i - u) >= (j - v))
        back_j = over & ~back_i
        i[back_i] -= 1
        j[back_j] -= 1
        return self.lookup[i, j]

    def as_matrix(self, values: np.ndarray) -> np.ndarray:
        """Values on an (n, n) array indexed by (i, j), NaN outside the simplex."""
        out = np.full((self.n, self.n), np.nan)
        out[self.ij[:, 0], self.ij[:, 1]] = values
        return out


GRIDS = {"interval": IntervalGrid, "square": SquareGrid, "simplex": SimplexGrid}


def make_grid(domain: str, n: int) -> Grid:
    return GRIDS[domain](n)
