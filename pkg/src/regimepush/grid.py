"""Uniform tensor grids on a truncated orthant [0, L1] x ... x [0, Ln], plus
grid-indexed per-regime value fields."""

from __future__ import annotations

import numpy as np

__all__ = ["Grid", "ValueField"]


class Grid:
    """Uniform grid with lower bounds pinned at 0 and N_k >= 3 nodes per axis."""

    def __init__(self, upper, counts):
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        counts = np.atleast_1d(np.asarray(counts, dtype=int))
        if upper.ndim != 1 or counts.shape != upper.shape:
            raise ValueError("upper bounds and node counts must be 1-d and aligned")
        if np.any(upper <= 0):
            raise ValueError("upper bounds must be positive")
        if np.any(counts < 3):
            raise ValueError("need at least 3 nodes per axis")
        self.upper = upper
        self.counts = counts
        self.n = upper.size
        self.shape = tuple(int(c) for c in counts)
        self.h = upper / (counts - 1)
        self.axes = [np.linspace(0.0, upper[k], counts[k]) for k in range(self.n)]
        self.num_nodes = int(np.prod(counts))

    def coords(self):
        """All node coordinates, shape (num_nodes, n), C-order (node-major)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def flat_index(self, multi):
        return int(np.ravel_multi_index(multi, self.shape))

    def multi_index(self, flat):
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))

    def node_coord(self, flat):
        multi = np.unravel_index(flat, self.shape)
        return np.array([self.axes[k][multi[k]] for k in range(self.n)])

    def is_interior(self):
        """Boolean mask over nodes: strictly inside (0, L_k) on every axis."""
        mask = np.ones(self.shape, dtype=bool)
        for k in range(self.n):
            sl = [slice(None)] * self.n
            sl[k] = 0
            mask[tuple(sl)] = False
            sl[k] = -1
            mask[tuple(sl)] = False
        return mask.ravel()

    def face_mask(self, axis, upper=False):
        """Mask over nodes sitting on the x_axis = 0 face (or = L_axis)."""
        mask = np.zeros(self.shape, dtype=bool)
        sl = [slice(None)] * self.n
        sl[axis] = -1 if upper else 0
        mask[tuple(sl)] = True
        return mask.ravel()

    def refine(self, factor=2):
        """Same domain with spacing divided by `factor`."""
        return Grid(self.upper, (self.counts - 1) * factor + 1)

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and np.array_equal(self.upper, other.upper)
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self):
        return f"Grid(upper={self.upper.tolist()}, counts={self.counts.tolist()})"


class ValueField:
    """Real value per (node, regime); values array has shape (num_nodes, m)."""

    def __init__(self, grid: Grid, m: int, values=None):
        self.grid = grid
        self.m = int(m)
        if values is None:
            values = np.zeros((grid.num_nodes, self.m))
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.num_nodes, self.m):
            raise ValueError(
                f"values shape {values.shape} != {(grid.num_nodes, self.m)}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("value field must be finite")
        self.values = values

    @classmethod
    def from_callable(cls, grid, m, fn):
        """Sample fn(x, alpha) at every node; fn takes an (n,) point, returns a scalar."""
        pts = grid.coords()
        vals = np.empty((grid.num_nodes, m))
        for alpha in range(m):
            vals[:, alpha] = np.array([fn(x, alpha) for x in pts])
        return cls(grid, m, vals)

    def as_mesh(self, alpha):
        """Regime slice reshaped to the grid shape (read-only view)."""
        v = self.values[:, alpha].reshape(self.grid.shape)
        v.flags.writeable = False
        return v

    def copy(self):
        return ValueField(self.grid, self.m, self.values.copy())

    def interp(self, x, alpha):
        """Multilinear interpolation at a point, clamped to the grid hull."""
        return _multilinear(self.grid, self.values[:, alpha], np.asarray(x, dtype=float))

    def interp_many(self, X, alphas):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        alphas = np.atleast_1d(np.asarray(alphas, dtype=int))
        out = np.empty(X.shape[0])
        for a in np.unique(alphas):
            sel = alphas == a
            out[sel] = _multilinear_many(self.grid, self.values[:, a], X[sel])
        return out


def _multilinear(grid, flat_vals, x):
    return float(_multilinear_many(grid, flat_vals, x[None, :])[0])


def _multilinear_many(grid, flat_vals, X):
    """Vectorized multilinear interpolation with clamping outside the hull."""
    B, n = X.shape
    vals = flat_vals.reshape(grid.shape)
    idx = []
    frac = []
    for k in range(n):
        t = np.clip(X[:, k], 0.0, grid.upper[k]) / grid.h[k]
        i = np.clip(np.floor(t).astype(int), 0, grid.shape[k] - 2)
        idx.append(i)
        frac.append(t - i)
    out = np.zeros(B)
    for corner in range(1 << n):
        w = np.ones(B)
        loc = []
        for k in range(n):
            if corner >> k & 1:
                w = w * frac[k]
                loc.append(idx[k] + 1)
            else:
                w = w * (1.0 - frac[k])
                loc.append(idx[k])
        out += w * vals[tuple(loc)]
    return out
