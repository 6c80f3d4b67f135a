"""Howard policy iteration for the coupled variational system on a truncated
grid, free-boundary extraction, and the hierarchical face-by-face solve for
models whose coefficients vanish on the lower faces.

Unknown ordering is lexicographic node-major, regime-minor; linear systems are
factorized with a fixed (natural) column order so repeated runs and decoupled
blocks reproduce bitwise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, ValueField
from .model import ModelSpec, RegimePushError, default_sample_lattice
from .operators import (
    assemble_generator_matrix,
    assemble_gradient_matrix,
    reward_vector,
)

__all__ = [
    "ACTION_CONTINUE",
    "PolicyField",
    "SolveOptions",
    "SolveReport",
    "FaceSystem",
    "SolveError",
    "solve",
    "extract_nonintervention_region",
    "residual_report",
    "hierarchical_solve",
]

ACTION_CONTINUE = 0  # push along axis i is action code i + 1

DIRECT_SOLVE_LIMIT = 200_000


class SolveError(RegimePushError):
    pass


@dataclass
class SolveOptions:
    tol: float = 1e-8
    max_iters: int = 200
    inner_tol: float = 1e-10
    boundary: str = "gradient_neumann"  # or "affine_dirichlet", "extrapolate"
    tie_margin: float = 1e-12
    kappa0: float | None = None

    def __post_init__(self):
        if self.tol <= 0 or self.inner_tol <= 0 or self.tie_margin < 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("need at least one policy iteration")
        if self.boundary not in ("gradient_neumann", "affine_dirichlet", "extrapolate"):
            raise ValueError(f"unknown boundary treatment {self.boundary!r}")


@dataclass
class SolveReport:
    iterations: int
    residual: float
    policy_changes: list
    converged: bool
    unknowns: int = 0


class PolicyField:
    """Action label per (node, regime): 0 = continue, i+1 = push along axis i."""

    def __init__(self, grid: Grid, m: int, actions=None):
        self.grid = grid
        self.m = int(m)
        if actions is None:
            actions = np.zeros((grid.num_nodes, self.m), dtype=np.int32)
        self.actions = np.asarray(actions, dtype=np.int32)
        if self.actions.shape != (grid.num_nodes, self.m):
            raise ValueError("policy shape mismatch")

    def continue_mask(self):
        return self.actions == ACTION_CONTINUE

    def copy(self):
        return PolicyField(self.grid, self.m, self.actions.copy())


@dataclass
class FaceSystem:
    indices: tuple
    model: ModelSpec
    grid: Grid
    value: ValueField
    policy: PolicyField
    report: SolveReport


# -- main solve ---------------------------------------------------------------


def solve(model: ModelSpec, grid: Grid, opts: SolveOptions | None = None,
          pinned_values=None):
    """Policy iteration for min{F_a, min_i(D_i V - f_i)} = 0 on the grid.

    pinned_values: optional (num_nodes, m) array with NaN for free unknowns;
    finite entries become Dirichlet rows (used by the hierarchical solve).

    Returns (ValueField, PolicyField, SolveReport); non-convergence returns the
    best iterate with converged=False rather than raising.
    """
    opts = opts or SolveOptions()
    res = model.validate(strict=False, samples=default_sample_lattice(model.n, grid.upper))
    if not res.ok:
        raise SolveError(res.code, res.message)

    K, m, n = grid.num_nodes, model.m, grid.n
    NK = K * m
    pts = grid.coords()

    L = assemble_generator_matrix(model, grid)
    A_F = (model.r * sp.identity(NK, format="csr") - L).tocsr()
    G = [assemble_gradient_matrix(model, grid, i) for i in range(n)]
    fvec = np.stack([reward_vector(model, grid, i) for i in range(n)], axis=0)  # (n, NK)

    lower_face = np.stack([grid.face_mask(i, upper=False) for i in range(n)], axis=0)
    outer_any = np.zeros(K, dtype=bool)
    outer_axis = np.full(K, -1)
    for i in range(n - 1, -1, -1):
        mask = grid.face_mask(i, upper=True)
        outer_any |= mask
        outer_axis[mask] = i  # smallest axis wins (reverse iteration)

    pinned = np.zeros((K, m), dtype=bool)
    pin_vals = np.zeros((K, m))
    if pinned_values is not None:
        pinned_values = np.asarray(pinned_values, dtype=float)
        pinned = np.isfinite(pinned_values)
        pin_vals = np.where(pinned, pinned_values, 0.0)

    kappa0 = opts.kappa0 if opts.kappa0 is not None else model.new_condition_bound()
    bound_vals = _affine_bound_values(model, pts, kappa0)

    # fixed boundary rows on the outer faces (all regimes)
    bnd_rows, bnd_mat, bnd_rhs, bnd_action = _boundary_rows(
        model, grid, opts, G, fvec, outer_any, outer_axis, bound_vals, kappa0
    )
    bnd_mask = np.zeros((K, m), dtype=bool)
    bnd_mask.ravel()[bnd_rows] = True
    bnd_mask &= ~pinned  # pinning wins over boundary treatment

    free = ~(pinned | bnd_mask)  # nodes whose action the policy chooses

    # initial iterate: affine growth envelope when available, else zero
    if bound_vals is not None:
        V = np.repeat(bound_vals[:, None], m, axis=1)
    else:
        V = np.zeros((K, m))
    V[pinned] = pin_vals[pinned]

    push_allowed = ~lower_face.T  # (K, n): cannot push along axis i at x_i = 0
    actions = np.zeros((K, m), dtype=np.int32)
    vflat = V.ravel()
    actions[free] = _improve(A_F, G, fvec, vflat, push_allowed, opts.tie_margin)[free]

    interior = grid.is_interior()
    changes_log = []
    residual = math.inf
    converged = False
    iterations = 0

    # regime blocks decouple exactly when the chain never switches; solving
    # them separately keeps each block bitwise equal to its standalone solve
    blocks = m if (m > 1 and not np.any(model.Q)) else 1
    pin_flat = pinned.ravel()
    pin_vflat = pin_vals.ravel()

    for iterations in range(1, opts.max_iters + 1):
        system, rhs = _assemble_system(
            A_F, G, fvec, actions, free, bnd_mask, bnd_mat, bnd_rhs, m
        )
        vflat = _solve_with_pins(system, rhs, vflat, opts, pin_flat, pin_vflat,
                                 blocks)
        V = vflat.reshape(K, m)

        proposal = _improve(A_F, G, fvec, vflat, push_allowed, opts.tie_margin)
        changed = int(np.count_nonzero((proposal != actions) & free))
        changes_log.append(changed)
        residual = _combined_residual(A_F, G, fvec, vflat, push_allowed, interior, m)
        if changed == 0 and residual <= opts.tol:
            converged = True
            break
        actions[free] = proposal[free]

    actions[~free] = ACTION_CONTINUE
    actions[bnd_mask] = bnd_action.reshape(K, m)[bnd_mask]
    out_field = ValueField(grid, m, V.copy())
    out_policy = PolicyField(grid, m, actions)
    report = SolveReport(iterations, float(residual), changes_log, converged, NK)
    return out_field, out_policy, report


def _affine_bound_values(model, pts, kappa0):
    fmax = model.f.abs_bound()
    if kappa0 is None or not math.isfinite(fmax):
        return None
    return fmax * (kappa0 / model.r + pts.sum(axis=1))


def _boundary_rows(model, grid, opts, G, fvec, outer_any, outer_axis, bound_vals, kappa0):
    """Rows replacing the equation at outer-face nodes, for every regime."""
    K, m, n = grid.num_nodes, model.m, grid.n
    NK = K * m
    nodes = np.nonzero(outer_any)[0]
    rows = (nodes[:, None] * m + np.arange(m)[None, :]).ravel()
    action = np.zeros(NK, dtype=np.int32)

    if opts.boundary == "gradient_neumann":
        mat = sp.lil_matrix((NK, NK))
        rhs = np.zeros(NK)
        for i in range(n):
            sel = nodes[outer_axis[nodes] == i]
            rr = (sel[:, None] * m + np.arange(m)[None, :]).ravel()
            mat[rr] = G[i][rr]
            rhs[rr] = fvec[i][rr]
            action[rr] = i + 1
        return rows, mat.tocsr(), rhs, action

    if opts.boundary == "affine_dirichlet":
        if bound_vals is None:
            # no finite growth envelope: fall back to the sampled domain bound
            pts = grid.coords()
            k_dom = _sampled_kappa0(model, pts)
            bound_vals = _affine_bound_values_for(model, pts, k_dom)
        mat = sp.identity(NK, format="csr")
        rhs = np.repeat(bound_vals, m)
        return rows, mat, rhs, action

    # extrapolate: zero second difference along the face axis (exact on affine tails)
    mat = sp.lil_matrix((NK, NK))
    rhs = np.zeros(NK)
    for i in range(n):
        sel = nodes[outer_axis[nodes] == i]
        if sel.size == 0:
            continue
        multi = np.array(np.unravel_index(sel, grid.shape)).T
        m1 = multi.copy()
        m1[:, i] -= 1
        m2 = multi.copy()
        m2[:, i] -= 2
        flat1 = np.ravel_multi_index(m1.T, grid.shape)
        flat2 = np.ravel_multi_index(m2.T, grid.shape)
        for alpha in range(m):
            rr = sel * m + alpha
            mat[rr, rr] = 1.0
            mat[rr, flat1 * m + alpha] = -2.0
            mat[rr, flat2 * m + alpha] = 1.0
    return rows, mat.tocsr(), rhs, action


def _sampled_kappa0(model, pts):
    ones = np.ones(model.n)
    k = 0.0
    for alpha in range(model.m):
        al = np.full(pts.shape[0], alpha)
        k = max(k, float(np.max(model.b.eval_many(pts, al) @ ones)))
        sg = model.sigma.eval_many(pts, al)
        k = max(k, float(np.max(np.linalg.norm(np.einsum("bij,i->bj", sg, ones), axis=-1))))
    return max(k, 1e-12)


def _affine_bound_values_for(model, pts, kappa0):
    fmax = model.f.abs_bound()
    if not math.isfinite(fmax):
        pts0 = np.zeros((1, model.n))
        fmax = max(
            float(np.max(np.abs(model.f.eval_many(pts0, np.array([a]))))) for a in range(model.m)
        )
    return fmax * (kappa0 / model.r + pts.sum(axis=1))


def _improve(A_F, G, fvec, vflat, push_allowed, margin):
    """Pick, per unknown, the alternative with the most negative residual;
    continue wins ties within the margin.  Returns (K, m) action codes."""
    NK = vflat.size
    m = NK // push_allowed.shape[0]
    res_cont = A_F @ vflat
    n = len(G)
    push_res = np.empty((n, NK))
    for i in range(n):
        push_res[i] = G[i] @ vflat - fvec[i]
        disallowed = np.repeat(~push_allowed[:, i], m)
        push_res[i, disallowed] = math.inf
    best_push = np.argmin(push_res, axis=0)
    best_val = push_res[best_push, np.arange(NK)]
    act = np.where(res_cont <= best_val + margin, ACTION_CONTINUE, best_push + 1)
    return act.astype(np.int32).reshape(-1, m)


def _combined_residual(A_F, G, fvec, vflat, push_allowed, interior, m):
    """Sup norm of min(F, allowed gradient parts) over strictly interior nodes."""
    res = A_F @ vflat
    NK = vflat.size
    for i in range(len(G)):
        gi = G[i] @ vflat - fvec[i]
        allowed = np.repeat(push_allowed[:, i], m)
        res = np.where(allowed, np.minimum(res, gi), res)
    keep = np.repeat(interior, m)
    if not np.any(keep):
        return 0.0
    return float(np.max(np.abs(res[keep])))


def _assemble_system(A_F, G, fvec, actions, free, bnd_mask, bnd_mat, bnd_rhs, m):
    """Row-select per the policy; pinned rows are left as (ignored) continue
    rows here and eliminated in _solve_with_pins."""
    NK = A_F.shape[0]
    act = actions.ravel()
    freef = free.ravel()
    sources = []
    rhs = np.zeros(NK)

    cont_rows = np.nonzero(~bnd_mask.ravel() & (act == ACTION_CONTINUE))[0]
    sources.append((cont_rows, A_F))
    for i in range(len(G)):
        rows_i = np.nonzero(freef & (act == i + 1))[0]
        if rows_i.size:
            sources.append((rows_i, G[i]))
            rhs[rows_i] = fvec[i][rows_i]

    b_rows = np.nonzero(bnd_mask.ravel())[0]
    if b_rows.size:
        sources.append((b_rows, bnd_mat))
        rhs[b_rows] = bnd_rhs[b_rows]

    all_rows = np.concatenate([r for r, _ in sources])
    stacked = sp.vstack([mat[r] for r, mat in sources], format="csr")
    order = np.argsort(all_rows, kind="stable")
    system = stacked[order]
    return system.tocsr(), rhs


def _solve_with_pins(system, rhs, x0, opts, pin_flat, pin_vals, blocks):
    """Eliminate pinned unknowns exactly, then solve (block by block when the
    regimes decouple)."""
    if np.any(pin_flat):
        free_idx = np.nonzero(~pin_flat)[0]
        reduced = system[free_idx][:, free_idx]
        rhs_f = rhs[free_idx] - system[free_idx][:, pin_flat] @ pin_vals[pin_flat]
        out = np.empty_like(rhs)
        out[pin_flat] = pin_vals[pin_flat]
        out[free_idx] = _linear_solve(reduced, rhs_f, x0[free_idx], opts, 1)
        return out
    return _linear_solve(system, rhs, x0, opts, blocks)


def _linear_solve(system, rhs, x0, opts, blocks):
    if blocks > 1:
        out = np.empty_like(rhs)
        for b in range(blocks):
            idx = np.arange(b, rhs.size, blocks)
            sub = system[idx][:, idx]
            out[idx] = _linear_solve(sub, rhs[idx], x0[idx], opts, 1)
        return out
    if system.shape[0] <= DIRECT_SOLVE_LIMIT:
        try:
            lu = spla.splu(system.tocsc(), permc_spec="NATURAL")
        except RuntimeError as exc:
            raise SolveError("SINGULAR_SYSTEM", str(exc)) from exc
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolveError("SINGULAR_SYSTEM", "factorization produced non-finite values")
        return x
    return _gauss_seidel(system.tocsr(), rhs, x0, opts.inner_tol)


def _gauss_seidel(A, b, x0, tol, max_sweeps=20000):
    """Lexicographic Gauss-Seidel sweeps via sparse triangular solves."""
    lower = sp.tril(A, k=0, format="csr")
    upper = (A - lower).tocsr()
    x = x0.copy()
    scale = max(1.0, float(np.max(np.abs(b))))
    for _ in range(max_sweeps):
        x = spla.spsolve_triangular(lower, b - upper @ x, lower=True)
        if float(np.max(np.abs(A @ x - b))) <= tol * scale:
            return x
    raise SolveError("SINGULAR_SYSTEM", "Gauss-Seidel failed to reach inner tolerance")


# -- region extraction and diagnostics ----------------------------------------


def extract_nonintervention_region(policy: PolicyField):
    """Continue-labeled nodes, and the free boundary: continue nodes with at
    least one grid neighbor (same regime) labeled push.

    Returns (region_mask (K, m) bool, boundary lists per regime of flat node
    indices, sorted).
    """
    grid = policy.grid
    region = policy.continue_mask()
    shape = grid.shape
    boundary = []
    for alpha in range(policy.m):
        cont = region[:, alpha].reshape(shape)
        push = ~cont
        neigh_push = np.zeros_like(cont)
        for k in range(grid.n):
            sl_lo = [slice(None)] * grid.n
            sl_hi = [slice(None)] * grid.n
            sl_lo[k] = slice(0, -1)
            sl_hi[k] = slice(1, None)
            neigh_push[tuple(sl_lo)] |= push[tuple(sl_hi)]
            neigh_push[tuple(sl_hi)] |= push[tuple(sl_lo)]
        edge = cont & neigh_push
        boundary.append(np.sort(np.nonzero(edge.ravel())[0]).tolist())
    return region, boundary


def residual_report(fld: ValueField, model: ModelSpec, grid: Grid, worst_k=10):
    """Sup norm of the combined residual over strictly interior nodes, with the
    worst offending (node, regime) locations."""
    m = model.m
    L = assemble_generator_matrix(model, grid)
    A_F = (model.r * sp.identity(grid.num_nodes * m, format="csr") - L).tocsr()
    G = [assemble_gradient_matrix(model, grid, i) for i in range(grid.n)]
    fvec = [reward_vector(model, grid, i) for i in range(grid.n)]
    v = fld.values.ravel()
    res = A_F @ v
    for i in range(grid.n):
        res = np.minimum(res, G[i] @ v - fvec[i])
    keep = np.repeat(grid.is_interior(), m)
    res_masked = np.where(keep, np.abs(res), -1.0)
    order = np.argsort(res_masked)[::-1][:worst_k]
    worst = [
        {
            "node": int(idx // m),
            "coord": grid.node_coord(int(idx // m)).tolist(),
            "regime": int(idx % m),
            "abs_residual": float(res_masked[idx]),
        }
        for idx in order
        if res_masked[idx] >= 0
    ]
    sup = float(np.max(res_masked)) if np.any(keep) else 0.0
    return sup, worst


# -- hierarchical face solve ---------------------------------------------------


class _ReducedField:
    """Coefficient field of a face subsystem: the parent field evaluated with
    zeros filled in for extinct coordinates, restricted to surviving rows."""

    def __init__(self, parent, indices, full_n):
        self.parent = parent
        self.indices = list(indices)
        self.full_n = full_n
        self.rank = parent.rank
        self.family = parent.family

    @property
    def m(self):
        return self.parent.m

    @property
    def n(self):
        return len(self.indices)

    @property
    def d(self):
        return self.parent.d

    def _embed(self, X):
        full = np.zeros((X.shape[0], self.full_n))
        full[:, self.indices] = X
        return full

    def eval_many(self, X, alphas):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = self.parent.eval_many(self._embed(X), alphas)
        return out[:, self.indices]  # rows; rank-2 keeps all noise columns

    def __call__(self, x, alpha):
        return self.eval_many(np.asarray(x, dtype=float)[None, :], np.array([alpha]))[0]

    def sum_bound(self):
        return self.parent.sum_bound()

    def abs_bound(self):
        return self.parent.abs_bound()

    def lipschitz_bound(self):
        return self.parent.lipschitz_bound()


def _reduced_model(model, indices):
    red = ModelSpec.__new__(ModelSpec)
    red.n = len(indices)
    red.m = model.m
    red.r = model.r
    red.b = _ReducedField(model.b, indices, model.n)
    red.sigma = _ReducedField(model.sigma, indices, model.n)
    red.f = _ReducedField(model.f, indices, model.n)
    red.Q = model.Q
    red.name = f"{model.name}|{tuple(indices)}"
    return red


def check_h1(model: ModelSpec, grid: Grid, tol=1e-10):
    """Sampled check that b_i and sigma row i vanish on the x_i = 0 face."""
    for i in range(model.n):
        face = np.nonzero(grid.face_mask(i, upper=False))[0]
        take = face[:: max(1, face.size // 64)]
        pts = np.stack([grid.node_coord(j) for j in take])
        for alpha in range(model.m):
            al = np.full(pts.shape[0], alpha)
            bi = model.b.eval_many(pts, al)[:, i]
            si = model.sigma.eval_many(pts, al)[:, i, :]
            bad = np.abs(bi) > tol
            bad_s = np.max(np.abs(si), axis=-1) > tol
            if np.any(bad | bad_s):
                w = int(np.argmax(bad | bad_s))
                raise SolveError(
                    "H1_VIOLATED",
                    f"coefficients do not vanish at x_{i}=0: x={pts[w].tolist()}, "
                    f"regime={alpha}, b_i={bi[w]}, |sigma_i|={float(np.max(np.abs(si[w])))}",
                )


def hierarchical_solve(model: ModelSpec, grid: Grid, opts: SolveOptions | None = None):
    """Solve every face subsystem bottom-up, then the full system with its
    lower faces pinned to the solved face values.

    Requires coefficients to vanish on the lower faces (extinction is
    absorbing); returns (face systems by subset, full (field, policy, report)).
    """
    opts = opts or SolveOptions()
    check_h1(model, grid)
    n = model.n
    systems: dict[tuple, FaceSystem] = {}

    for size in range(1, n + 1):
        for indices in itertools.combinations(range(n), size):
            sub_model = _reduced_model(model, indices) if size < n else model
            sub_grid = Grid(grid.upper[list(indices)], grid.counts[list(indices)])
            pinned = _pin_lower_faces(sub_grid, model.m, indices, systems)
            fld, pol, rep = solve(sub_model, sub_grid, opts, pinned_values=pinned)
            systems[indices] = FaceSystem(indices, sub_model, sub_grid, fld, pol, rep)

    full = systems[tuple(range(n))]
    faces = [systems[k] for k in sorted(systems, key=lambda t: (len(t), t)) if len(k) < n]
    return faces, (full.value, full.policy, full.report)


def _pin_lower_faces(sub_grid, m, indices, systems):
    """Dirichlet data on each x_pos = 0 face of the subsystem grid from the
    already-solved smaller subsystem (empty subset pins to zero)."""
    pinned = np.full((sub_grid.num_nodes, m), np.nan)
    size = len(indices)
    for pos in range(size):
        child = tuple(j for k, j in enumerate(indices) if k != pos)
        face_nodes = np.nonzero(sub_grid.face_mask(pos, upper=False))[0]
        if size == 1:
            pinned[face_nodes, :] = 0.0
            continue
        child_sys = systems[child]
        multi = np.array(np.unravel_index(face_nodes, sub_grid.shape)).T
        child_multi = np.delete(multi, pos, axis=1)
        child_flat = np.ravel_multi_index(child_multi.T, child_sys.grid.shape)
        pinned[face_nodes, :] = child_sys.value.values[child_flat, :]
    return pinned
