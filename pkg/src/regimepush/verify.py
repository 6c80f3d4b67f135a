"""Post-solve verification checks: discrete monotonicity, gradient and PDE
inequalities, the affine growth envelope, boundary subsolution probes, and the
Monte Carlo programming-identity sanity check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import Grid, ValueField
from .model import ModelSpec
from .operators import (
    assemble_generator_matrix,
    assemble_gradient_matrix,
    reward_vector,
)
from .solver import residual_report

__all__ = [
    "CheckResult",
    "monotonicity_check",
    "gradient_check",
    "pde_check",
    "affine_bound_check",
    "run_field_checks",
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""

    def as_dict(self):
        return {"name": self.name, "passed": self.passed, "worst": self.worst,
                "detail": self.detail}


def monotonicity_check(fld: ValueField, model: ModelSpec, tol):
    """V(x) - V(y) >= f(x).(x - y) - 10 tol for grid-comparable y <= x.

    Adjacent pairs imply the rest when f is nonincreasing; a sample of longer
    lags is checked directly as well.
    """
    grid = fld.grid
    slack = 10.0 * tol
    worst = math.inf
    pts = grid.coords()
    for alpha in range(fld.m):
        vmesh = fld.values[:, alpha].reshape(grid.shape)
        fall = model.f.eval_many(pts, np.full(grid.num_nodes, alpha))
        for i in range(grid.n):
            fmesh = fall[:, i].reshape(grid.shape)
            for lag in (1, max(2, grid.shape[i] // 3)):
                if grid.shape[i] <= lag:
                    continue
                hi = [slice(None)] * grid.n
                lo = [slice(None)] * grid.n
                hi[i] = slice(lag, None)
                lo[i] = slice(0, -lag)
                gap = vmesh[tuple(hi)] - vmesh[tuple(lo)] - fmesh[tuple(hi)] * (
                    lag * grid.h[i]
                )
                worst = min(worst, float(np.min(gap)))
    return CheckResult("monotonicity", worst >= -slack, worst,
                       "min of V(x)-V(y)-f(x).(x-y) over sampled pairs")


def gradient_check(fld: ValueField, model: ModelSpec, tol):
    """Backward-difference D_i V >= f_i - 10 tol at interior nodes."""
    grid = fld.grid
    v = fld.values.ravel()
    keep = np.repeat(grid.is_interior(), fld.m)
    worst = math.inf
    for i in range(grid.n):
        G = assemble_gradient_matrix(model, grid, i)
        res = (G @ v - reward_vector(model, grid, i))[keep]
        worst = min(worst, float(np.min(res)))
    return CheckResult("gradient_constraints", worst >= -10.0 * tol, worst,
                       "min over interior nodes of D_i V - f_i")


def pde_check(fld: ValueField, model: ModelSpec, tol):
    """Discrete F >= -10 tol at interior nodes."""
    grid = fld.grid
    NK = grid.num_nodes * fld.m
    L = assemble_generator_matrix(model, grid)
    A_F = model.r * sp.identity(NK, format="csr") - L
    res = (A_F @ fld.values.ravel())[np.repeat(grid.is_interior(), fld.m)]
    worst = float(np.min(res))
    return CheckResult("pde_inequality", worst >= -10.0 * tol, worst,
                       "min over interior nodes of the discrete F")


def affine_bound_check(fld: ValueField, model: ModelSpec, tol, kappa0=None):
    """V <= ||f||_inf (kappa0/r + 1.x) + 10 tol when the coefficient sums admit
    a finite kappa0; inapplicable (passes vacuously) otherwise."""
    grid = fld.grid
    kappa0 = kappa0 if kappa0 is not None else model.new_condition_bound()
    fmax = model.f.abs_bound()
    if kappa0 is None or math.isinf(fmax):
        return CheckResult("affine_bound", True, float("nan"),
                           "not applicable: coefficient sums unbounded")
    bound = fmax * (kappa0 / model.r + grid.coords().sum(axis=1))
    gap = bound[:, None] - fld.values
    worst = float(np.min(gap))
    return CheckResult("affine_bound", worst >= -10.0 * tol, worst,
                       f"min of bound - V with kappa0={kappa0}")


def residual_check(fld: ValueField, model: ModelSpec, grid: Grid, tol):
    sup, worst = residual_report(fld, model, grid)
    return CheckResult("residual", sup <= 10.0 * tol, sup,
                       "sup |combined residual| over interior nodes")


def run_field_checks(fld: ValueField, model: ModelSpec, tol=1e-8):
    return [
        residual_check(fld, model, fld.grid, tol),
        monotonicity_check(fld, model, tol),
        gradient_check(fld, model, tol),
        pde_check(fld, model, tol),
        affine_bound_check(fld, model, tol),
    ]
