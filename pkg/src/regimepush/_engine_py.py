"""Pure-numpy batch path engine: lockstep Euler steps over a batch of paths.

This is the fallback twin of the compiled kernel.  Both consume identical
pre-generated normals/regimes/discounts and perform the same arithmetic in the
same order, so their outputs agree bitwise (the extension is compiled with FP
contraction off).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "pure"

FLAG_NAN = 1
FLAG_DZ_NEGATIVE = 2
FLAG_X_NEGATIVE = 4

FAM_CONSTANT = 0
FAM_GEOMETRIC = 1
FAM_SQRT = 2
FAM_AFFINE = 3

MODE_POLICY = 0
MODE_EXPLICIT = 1


def eval_vector(fam, coef, amat, X, alphas):
    """Vector coefficient (drift/reward) at clamped states; (B, n)."""
    Xc = np.where(X > 0.0, X, 0.0)
    if fam == FAM_CONSTANT:
        return coef[alphas]
    if fam == FAM_GEOMETRIC:
        return coef[alphas] * Xc
    if fam == FAM_SQRT:
        return coef[alphas] * np.sqrt(Xc)
    out = coef[alphas].copy()
    A = amat[alphas]
    n = X.shape[1]
    for j in range(n):
        out += A[:, :, j] * Xc[:, j:j + 1]
    return out


def eval_sigma_dot(fam, full, coef, X, alphas, xi):
    """sigma(X, alpha) @ xi accumulated column by column; (B, n)."""
    Xc = np.where(X > 0.0, X, 0.0)
    B, n = X.shape
    if xi.shape[1] == 0:
        return np.zeros((B, n))
    if fam == FAM_CONSTANT:
        s = full[alphas]  # (B, n, d)
        out = np.zeros((B, n))
        for j in range(s.shape[2]):
            out += s[:, :, j] * xi[:, j:j + 1]
        return out
    if fam == FAM_GEOMETRIC:
        diag = coef[alphas] * Xc
    else:
        diag = coef[alphas] * np.sqrt(Xc)
    return diag * xi[:, :n]


def region_interp(region_alpha, shape, h, upper, X):
    """Multilinear interpolation of a per-node indicator at (possibly
    out-of-hull) points; clamped.  Node coordinates are i * h."""
    B, n = X.shape
    vals = region_alpha.reshape(shape)
    idx, frac = [], []
    for k in range(n):
        xk = np.clip(X[:, k], 0.0, upper[k])
        t = xk / h[k]
        i = np.floor(t)
        i = np.where(i > shape[k] - 2, float(shape[k] - 2), i)
        i = np.where(i < 0, 0.0, i).astype(np.int64)
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


def _interp_with_coord(region_alpha, shape, h, upper, X, axis, coord):
    Y = X.copy()
    Y[:, axis] = coord
    return region_interp(region_alpha, shape, h, upper, Y)


def point_in_region(region, shape, h, upper, X, alphas):
    """Indicator >= 0.5 test at points, per path regime."""
    B = X.shape[0]
    v = np.empty(B)
    for a in np.unique(alphas):
        sel = alphas == a
        v[sel] = region_interp(region[a], shape, h, upper, X[sel])
    return v >= 0.5


def project_points(region, shape, h, upper, X, alphas):
    """Project points onto the region closure by lowering coordinates, axes in
    index order, smallest decrease per axis.  Returns (Xproj, dZ).

    A path whose sweep makes no progress (or that is still outside after n
    sweeps) is pushed to the origin: coordinates above 0 drop to 0, negative
    ones stay so dZ never goes negative.
    """
    B, n = X.shape
    Xp = X.copy()
    v = np.empty(B)
    for a in np.unique(alphas):
        sel = alphas == a
        v[sel] = region_interp(region[a], shape, h, upper, X[sel])
    need = v < 0.5

    for _sweep in range(n):
        if not np.any(need):
            break
        progressed = np.zeros(B, dtype=bool)
        for axis in range(n):
            act = np.nonzero(need)[0]
            if act.size == 0:
                break
            for a in np.unique(alphas[act]):
                rows = act[alphas[act] == a]
                y, ok = _scan_down(region[a], shape, h, upper, Xp[rows], axis,
                                   v[rows])
                hit = ok & (y < Xp[rows, axis])
                rr = rows[hit]
                if rr.size:
                    Xp[rr, axis] = y[hit]
                    progressed[rr] = True
                    v[rr] = region_interp(region[a], shape, h, upper, Xp[rr])
            need = v < 0.5
        stuck = need & ~progressed
        if np.any(stuck):
            Xp[stuck] = np.where(Xp[stuck] < 0.0, Xp[stuck], 0.0)
            need[stuck] = False
    still = np.nonzero(need)[0]
    if still.size:
        Xp[still] = np.where(Xp[still] < 0.0, Xp[still], 0.0)
    dZ = X - Xp
    return Xp, dZ


def _scan_down(region_a, shape, h, upper, X, axis, v_start):
    """Largest coordinate <= x_axis on the axis line with indicator >= 0.5.

    Mirrors the kernel scan: probe node coordinates j*h downward, linear
    crossing inside the first cell whose lower node is inside.
    """
    B = X.shape[0]
    xa = np.clip(X[:, axis], 0.0, upper[axis])
    j0 = np.floor(xa / h[axis])
    j0 = np.clip(j0, 0, shape[axis] - 2).astype(np.int64)
    y = np.full(B, -1.0)
    ok = np.zeros(B, dtype=bool)
    p_prev = xa.copy()
    v_prev = v_start.copy()
    j = j0.copy()
    active = np.ones(B, dtype=bool)
    while np.any(active):
        rows = np.nonzero(active)[0]
        pj = j[rows] * h[axis]
        vj = _interp_with_coord(region_a, shape, h, upper, X[rows], axis, pj)
        hit = vj >= 0.5
        rr = rows[hit]
        y[rr] = pj[hit] + (0.5 - vj[hit]) * (p_prev[rr] - pj[hit]) / (v_prev[rr] - vj[hit])
        ok[rr] = True
        active[rr] = False
        miss = rows[~hit]
        p_prev[miss] = pj[~hit]
        v_prev[miss] = vj[~hit]
        exhausted = miss[j[miss] == 0]
        active[exhausted] = False
        j[miss] = np.maximum(j[miss] - 1, 0)
    return y, ok


def evolve_batch(mode, pack, region_pack, normals, regimes, x0, dt, sqdt,
                 discounts, z0, dz, record=False):
    """Evolve a batch of controlled paths.

    normals: (B, K, d); regimes: (B, K+1) int8; discounts: (K+1,) precomputed
    exp(-r t_k).  Policy mode projects onto the region closure after each Euler
    step; explicit mode applies the supplied initial lump z0 (B, n) and
    increments dz (B, K, n).

    Returns (payoff (B,), X_final, Z_total, initial_jump, flags, trace) where
    trace is (X_path, Z_path) when record else None.
    """
    bfam, bcoef, bA, sfam, sfull, scoef, ffam, fcoef, fA = pack
    B, K, d = normals.shape
    n = x0.size
    flags = np.zeros(B, dtype=np.int64)

    X = np.tile(x0, (B, 1))
    Z = np.zeros((B, n))
    pay = np.zeros(B)
    a0 = regimes[:, 0].astype(np.int64)

    if mode == MODE_POLICY:
        region, shape, h, upper = region_pack
        f0 = eval_vector(ffam, fcoef, fA, X, a0)
        Xp, dZ0 = project_points(region, shape, h, upper, X, a0)
        for i in range(n):
            pay += f0[:, i] * dZ0[:, i]
        X = Xp
        Z += dZ0
        init_jump = dZ0
    else:
        f0 = eval_vector(ffam, fcoef, fA, X, a0)
        for i in range(n):
            pay += f0[:, i] * z0[:, i]
        X = X - z0
        Z += z0
        init_jump = z0.copy()
        flags[np.any(z0 < 0, axis=1)] |= FLAG_DZ_NEGATIVE

    if record:
        X_path = np.empty((B, K + 1, n))
        Z_path = np.empty((B, K + 1, n))
        X_path[:, 0] = X
        Z_path[:, 0] = Z
    else:
        X_path = Z_path = None

    for k in range(K):
        ak = regimes[:, k].astype(np.int64)
        an = regimes[:, k + 1].astype(np.int64)
        bv = eval_vector(bfam, bcoef, bA, X, ak)
        sv = eval_sigma_dot(sfam, sfull, scoef, X, ak, normals[:, k, :])
        Xn = X + bv * dt + sv * sqdt
        disc = discounts[k + 1]
        if mode == MODE_POLICY:
            fv = eval_vector(ffam, fcoef, fA, Xn, an)
            Xp, dZ = project_points(region, shape, h, upper, Xn, an)
            inc = np.zeros(B)
            for i in range(n):
                inc += fv[:, i] * dZ[:, i]
            pay += disc * inc
            X = Xp
            Z += dZ
        else:
            fv = eval_vector(ffam, fcoef, fA, Xn, an)
            if dz.shape[0] == 1:
                dzk = np.broadcast_to(dz[0, k], (B, n))
            else:
                dzk = dz[:, k, :]
            inc = np.zeros(B)
            for i in range(n):
                inc += fv[:, i] * dzk[:, i]
            pay += disc * inc
            X = Xn - dzk
            Z += dzk
            flags[np.any(dzk < 0, axis=1)] |= FLAG_DZ_NEGATIVE
        if record:
            X_path[:, k + 1] = X
            Z_path[:, k + 1] = Z
        if np.any(X < -1e-12):
            flags[np.any(X < -1e-12, axis=1)] |= FLAG_X_NEGATIVE

    bad = ~np.isfinite(pay) | ~np.all(np.isfinite(X), axis=1)
    flags[bad] |= FLAG_NAN
    trace = (X_path, Z_path) if record else None
    return pay, X, Z, init_jump, flags, trace
