"""Pointwise and discrete realizations of the coupled operator, the PDE part of
the variational system, the gradient-constraint residuals, and the exponential
change of unknown used for growth control.

Discretization: upwind first differences for drift (forward where positive,
backward where negative), central second differences, and a monotone
seven-point-style cross stencil when sigma sigma' has off-diagonal entries.
One-sided fallbacks apply on the grid faces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import Grid, ValueField
from .model import ModelSpec, RegimePushError

__all__ = [
    "TransformContext",
    "QviResidual",
    "apply_generator",
    "f_value",
    "qvi_residual",
    "exp_transform",
    "exp_untransform",
    "h_lambda",
    "assemble_generator_matrix",
    "assemble_gradient_matrix",
    "reward_vector",
]


class OperatorError(RegimePushError):
    pass


@dataclass
class QviResidual:
    """Residual pieces at one (node, regime): the PDE value, the gradient
    constraint values, and their minimum."""

    pde_part: float
    gradient_parts: np.ndarray
    combined: float


@dataclass
class TransformContext:
    """Parameters of the change of unknown u~ = exp(-lambda * s(x)) u with
    s(x) = x . 1."""

    lam: float
    kappa0: float | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.kappa0 is not None:
            margin = 1.0 * self.lam * self.kappa0 + 0.5 * self.lam**2 * self.kappa0**2
            if not margin < math.inf:
                raise ValueError("kappa0 must be finite")

    @classmethod
    def for_rate(cls, r, kappa0):
        """Default lambda = min(0.1, r / (2 k0 + k0^2 + 1)), which keeps
        r - lambda k0 - lambda^2 k0^2 / 2 strictly positive."""
        lam = min(0.1, r / (2.0 * kappa0 + kappa0**2 + 1.0))
        ctx = cls(lam, kappa0)
        assert r - lam * kappa0 - 0.5 * lam**2 * kappa0**2 > 0
        return ctx

    def s(self, x):
        return float(np.sum(x))


# -- pointwise algebra --------------------------------------------------------


def f_value(model: ModelSpec, x, alpha, xi, p, A):
    """PDE part of the system at a jet: r xi_a - tr(sigma sigma' A)/2 - b.p
    - sum_j q_aj xi_j."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    p = np.asarray(p, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.shape != (model.n, model.n) or not np.allclose(A, A.T, atol=1e-10):
        raise ValueError("A must be symmetric n x n")
    sv = model.sigma(x, alpha)
    bv = model.b(x, alpha)
    return float(
        model.r * xi[alpha]
        - 0.5 * np.trace(sv @ sv.T @ A)
        - bv @ p
        - model.Q[alpha] @ xi
    )


def h_lambda(model: ModelSpec, x, alpha, q, p, A, ctx: TransformContext):
    """Transformed second-order operator: tr(ss'A)/2 + (lam/2)(1'ss'p + p'ss'1)
    + b.p + lam q b.1 + (lam^2/2) q |s'1|^2."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    A = np.asarray(A, dtype=float)
    sv = model.sigma(x, alpha)
    bv = model.b(x, alpha)
    ones = np.ones(model.n)
    ss = sv @ sv.T
    lam = ctx.lam
    return float(
        0.5 * np.trace(ss @ A)
        + 0.5 * lam * (ones @ ss @ p + p @ ss @ ones)
        + bv @ p
        + lam * q * (bv @ ones)
        + 0.5 * lam**2 * q * float((sv.T @ ones) @ (sv.T @ ones))
    )


def exp_transform(fld: ValueField, ctx: TransformContext):
    """Pointwise u~(x, a) = exp(-lam s(x)) u(x, a)."""
    s = fld.grid.coords().sum(axis=1)
    return ValueField(fld.grid, fld.m, fld.values * np.exp(-ctx.lam * s)[:, None])


def exp_untransform(fld: ValueField, ctx: TransformContext):
    s = fld.grid.coords().sum(axis=1)
    return ValueField(fld.grid, fld.m, fld.values * np.exp(ctx.lam * s)[:, None])


# -- discrete stencils (scalar form) ------------------------------------------


def _spatial_entries(grid: Grid, multi, bvec, amat):
    """Off-node stencil for b.D + tr(a D^2)/2 at one node:
    {flat_neighbor: coefficient}, neighbor != node.

    The node's own coefficient is implied as minus the off-node sum (every
    consistent derivative stencil kills constants), which lets callers apply
    the operator in difference form and annihilate constants exactly.

    Upwind drift, central second differences, monotone cross stencil; one-sided
    fallbacks on faces.
    """
    n = grid.n
    h = grid.h
    shape = grid.shape
    entries = {}

    def add(offsets, val):
        if val == 0.0 or not offsets:
            return
        idx = tuple(multi[k] + offsets.get(k, 0) for k in range(n))
        flat = int(np.ravel_multi_index(idx, shape))
        entries[flat] = entries.get(flat, 0.0) + val

    for k in range(n):
        ik = multi[k]
        lower, upper = ik == 0, ik == shape[k] - 1
        bk = float(bvec[k])
        if bk != 0.0:
            if (bk > 0 and not upper) or (bk < 0 and lower):
                add({k: +1}, bk / h[k])
                add({}, -bk / h[k])
            else:
                add({k: -1}, -bk / h[k])
                add({}, bk / h[k])
        akk = float(amat[k, k])
        if akk != 0.0:
            if not lower and not upper:
                add({k: +1}, 0.5 * akk / h[k] ** 2)
                add({k: -1}, 0.5 * akk / h[k] ** 2)
                add({}, -akk / h[k] ** 2)
            else:
                sgn = +1 if lower else -1
                add({}, 0.5 * akk / h[k] ** 2)
                add({k: sgn}, -akk / h[k] ** 2)
                add({k: 2 * sgn}, 0.5 * akk / h[k] ** 2)
        for l in range(k + 1, n):
            akl = float(amat[k, l])
            if akl == 0.0:
                continue
            il = multi[l]
            lk_face = ik in (0, shape[k] - 1)
            ll_face = il in (0, shape[l] - 1)
            c = akl / (2.0 * h[k] * h[l])
            if not lk_face and not ll_face:
                if akl > 0:
                    add({}, 2 * c)
                    add({k: +1, l: +1}, c)
                    add({k: -1, l: -1}, c)
                else:
                    add({}, -2 * c)
                    add({k: +1, l: -1}, -c)
                    add({k: -1, l: +1}, -c)
                for kk in (k, l):
                    add({kk: +1}, -abs(c))
                    add({kk: -1}, -abs(c))
            else:
                sl = +1 if il == 0 else (-1 if il == shape[l] - 1 else None)
                skk = +1 if ik == 0 else (-1 if ik == shape[k] - 1 else None)
                if skk is None:
                    skk = int(math.copysign(1, akl * sl))
                if sl is None:
                    sl = int(math.copysign(1, akl * skk))
                cc = akl / (skk * sl * h[k] * h[l])
                add({k: skk, l: sl}, cc)
                add({k: skk}, -cc)
                add({l: sl}, -cc)
                add({}, cc)
    return entries


def apply_generator(fld: ValueField, model: ModelSpec, node, regime):
    """Discrete L h at one (node, regime): diffusion + drift stencils applied
    to the field plus the switching coupling sum_j q_aj h(x, j).

    Evaluated in difference form (off-node coefficient times the increment
    against the node value, chain coupling against the regime value), so fields
    constant in x and regime are annihilated exactly.
    """
    grid = fld.grid
    multi = _as_multi(grid, node)
    x = np.array([grid.axes[k][multi[k]] for k in range(grid.n)])
    bvec = model.b(x, regime)
    sv = model.sigma(x, regime)
    entries = _spatial_entries(grid, multi, bvec, sv @ sv.T)
    flat = int(np.ravel_multi_index(multi, grid.shape))
    center = fld.values[flat, regime]
    out = sum(c * (fld.values[j, regime] - center) for j, c in entries.items())
    for j in range(model.m):
        if j != regime and model.Q[regime, j] != 0.0:
            out += model.Q[regime, j] * (fld.values[flat, j] - center)
    return float(out)


def qvi_residual(fld: ValueField, model: ModelSpec, node, regime):
    """PDE residual and gradient-constraint residuals at one (node, regime).

    pde_part = r V - L_h V; gradient_parts[i] is the backward difference of V
    along axis i minus f_i (forward one-sided on the x_i = 0 face); combined is
    the minimum of all parts.
    """
    grid = fld.grid
    multi = _as_multi(grid, node)
    flat = int(np.ravel_multi_index(multi, grid.shape))
    x = np.array([grid.axes[k][multi[k]] for k in range(grid.n)])
    pde = model.r * fld.values[flat, regime] - apply_generator(fld, model, node, regime)
    fv = model.f(x, regime)
    grads = np.empty(grid.n)
    for i in range(grid.n):
        if multi[i] == 0:
            nb = list(multi)
            nb[i] += 1
            dv = (fld.values[grid.flat_index(nb), regime] - fld.values[flat, regime]) / grid.h[i]
        else:
            nb = list(multi)
            nb[i] -= 1
            dv = (fld.values[flat, regime] - fld.values[grid.flat_index(nb), regime]) / grid.h[i]
        grads[i] = dv - fv[i]
    return QviResidual(float(pde), grads, float(min(pde, grads.min())))


def _as_multi(grid, node):
    if np.isscalar(node):
        if not 0 <= int(node) < grid.num_nodes:
            raise OperatorError("OUT_OF_GRID", f"node {node} outside grid {grid.shape}")
        multi = grid.multi_index(int(node))
    else:
        multi = tuple(int(i) for i in node)
    for k in range(grid.n):
        if not 0 <= multi[k] < grid.shape[k]:
            raise OperatorError("OUT_OF_GRID", f"node {multi} outside grid {grid.shape}")
    return multi


# -- discrete operators in matrix form (used by the solver) -------------------


def assemble_generator_matrix(model: ModelSpec, grid: Grid, check_monotone=True):
    """Sparse matrix of the discrete operator L over all (node, regime)
    unknowns, node-major regime-minor.  Raises NONMONOTONE_DIFFUSION when the
    cross terms cannot be given a monotone stencil (diagonal dominance fails)."""
    K, m, n = grid.num_nodes, model.m, grid.n
    pts = grid.coords()
    rows, cols, vals = [], [], []

    if check_monotone and n > 1:
        _require_diag_dominance(model, grid, pts)

    for alpha in range(m):
        al = np.full(K, alpha)
        bs = model.b.eval_many(pts, al)
        sg = model.sigma.eval_many(pts, al)
        aa = np.einsum("bij,bkj->bik", sg, sg)
        for flat in range(K):
            multi = np.unravel_index(flat, grid.shape)
            entries = _spatial_entries(grid, multi, bs[flat], aa[flat])
            row = flat * m + alpha
            for nb, c in entries.items():
                rows.append(row)
                cols.append(nb * m + alpha)
                vals.append(c)
                rows.append(row)
                cols.append(row)
                vals.append(-c)
        # chain coupling in difference form: implied diagonal -sum(off)
        for j in range(m):
            if j == alpha:
                continue
            q = model.Q[alpha, j]
            if q != 0.0:
                rows.extend(range(alpha, K * m, m))
                cols.extend(range(j, K * m, m))
                vals.extend([q] * K)
                rows.extend(range(alpha, K * m, m))
                cols.extend(range(alpha, K * m, m))
                vals.extend([-q] * K)
    L = sp.coo_matrix((vals, (rows, cols)), shape=(K * m, K * m)).tocsr()
    L.sum_duplicates()
    return L


def _require_diag_dominance(model, grid, pts):
    """Monotone cross stencils need a_kk / h_k >= sum_{l != k} |a_kl| / h_l at
    every interior node."""
    h = grid.h
    for alpha in range(model.m):
        al = np.full(pts.shape[0], alpha)
        sg = model.sigma.eval_many(pts, al)
        aa = np.einsum("bij,bkj->bik", sg, sg)
        off = np.abs(aa) @ (1.0 / h)
        for k in range(grid.n):
            lhs = aa[:, k, k] / h[k]
            rhs = off[:, k] - np.abs(aa[:, k, k]) / h[k]
            bad = lhs < rhs - 1e-12
            if np.any(bad):
                where = int(np.argmax(bad))
                raise OperatorError(
                    "NONMONOTONE_DIFFUSION",
                    "sigma sigma' not diagonally dominant at "
                    f"x={pts[where].tolist()}, regime={alpha}, axis={k}",
                )


def assemble_gradient_matrix(model: ModelSpec, grid: Grid, axis):
    """Backward-difference matrix D_i over all (node, regime) unknowns
    (forward one-sided on the x_i = 0 face)."""
    K, m = grid.num_nodes, model.m
    shape = grid.shape
    h = grid.h[axis]
    idx = np.arange(K).reshape(shape)
    take = [slice(None)] * grid.n

    rows, cols, vals = [], [], []
    take[axis] = slice(1, None)
    inner = idx[tuple(take)].ravel()
    take[axis] = slice(0, -1)
    below = idx[tuple(take)].ravel()
    rows.append(inner)
    cols.append(inner)
    vals.append(np.full(inner.size, 1.0 / h))
    rows.append(inner)
    cols.append(below)
    vals.append(np.full(inner.size, -1.0 / h))

    take[axis] = slice(0, 1)
    face = idx[tuple(take)].ravel()
    take[axis] = slice(1, 2)
    above = idx[tuple(take)].ravel()
    rows.append(face)
    cols.append(above)
    vals.append(np.full(face.size, 1.0 / h))
    rows.append(face)
    cols.append(face)
    vals.append(np.full(face.size, -1.0 / h))

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    # replicate for every regime in node-major regime-minor ordering
    rr = (rows[:, None] * m + np.arange(m)[None, :]).ravel()
    cc = (cols[:, None] * m + np.arange(m)[None, :]).ravel()
    vv = np.repeat(vals, m)
    G = sp.coo_matrix((vv, (rr, cc)), shape=(K * m, K * m)).tocsr()
    G.sum_duplicates()
    return G


def reward_vector(model: ModelSpec, grid: Grid, axis):
    """f_axis(x, regime) flattened over (node, regime), node-major."""
    pts = grid.coords()
    out = np.empty(grid.num_nodes * model.m)
    for alpha in range(model.m):
        out[alpha::model.m] = model.f.eval_many(pts, np.full(grid.num_nodes, alpha))[:, axis]
    return out
