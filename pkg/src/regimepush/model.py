"""Problem data for singular control of regime-switching diffusions: coefficient
fields, the model record, standing-assumption validators, and the built-in
benchmark model families.

Coefficients come in a handful of closed-form families plus tabulated fields;
all evaluate deterministically on the closed positive orthant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CoefficientField",
    "ModelSpec",
    "ComparisonReport",
    "ValidationResult",
    "ValidationError",
    "validate_generator",
    "validate_reward",
    "check_comparison_conditions",
    "check_example3_params",
    "lyapunov_check",
    "builtin_model",
    "load_model_toml",
    "BUILTIN_NAMES",
]

GEN_TOL = 1e-12
FAMILIES = ("constant", "affine", "geometric", "sqrt_power", "table")


class RegimePushError(Exception):
    """Base error; carries a stable machine-readable code."""

    def __init__(self, code, message, **details):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.details = details


class ValidationError(RegimePushError):
    pass


@dataclass
class ValidationResult:
    ok: bool
    code: str = "OK"
    message: str = ""
    where: tuple = ()

    def __bool__(self):
        return self.ok


class CoefficientField:
    """Per-regime coefficient field on the closed orthant.

    rank 1 fields map (x, alpha) -> R^n (drift, reward); rank 2 fields map to
    R^{n x d} (diffusion).  Geometric and sqrt-power diffusions are diagonal
    with d = n.  Evaluation clamps x at 0 componentwise so that roundoff below
    zero never produces NaN.
    """

    def __init__(self, family, rank, params):
        if family not in FAMILIES:
            raise ValueError(f"unknown family {family!r}")
        self.family = family
        self.rank = rank
        self.params = params

    # -- constructors -------------------------------------------------------

    @classmethod
    def constant(cls, values):
        values = np.asarray(values, dtype=float)
        rank = values.ndim - 1  # (m, n) or (m, n, d)
        if rank not in (1, 2):
            raise ValueError("constant field needs (m, n) or (m, n, d) values")
        return cls("constant", rank, {"values": values})

    @classmethod
    def affine(cls, A, c):
        A = np.asarray(A, dtype=float)
        c = np.asarray(c, dtype=float)
        if A.ndim != 3 or c.ndim != 2 or A.shape[:2] != c.shape:
            raise ValueError("affine field needs A (m, n, n) and c (m, n)")
        return cls("affine", 1, {"A": A, "c": c})

    @classmethod
    def geometric(cls, coefs, rank=1):
        coefs = np.asarray(coefs, dtype=float)
        if coefs.ndim != 2:
            raise ValueError("geometric field needs coefs (m, n)")
        return cls("geometric", rank, {"coefs": coefs})

    @classmethod
    def sqrt_power(cls, coefs, rank=1):
        coefs = np.asarray(coefs, dtype=float)
        if coefs.ndim != 2:
            raise ValueError("sqrt_power field needs coefs (m, n)")
        return cls("sqrt_power", rank, {"coefs": coefs})

    @classmethod
    def table(cls, axes, values):
        """Sampled field with multilinear interpolation, clamped outside.

        axes: list of 1-d sorted coordinate arrays; values has shape
        (m, *grid_shape, n) for rank 1 or (m, *grid_shape, n, d) for rank 2.
        """
        axes = [np.asarray(a, dtype=float) for a in axes]
        values = np.asarray(values, dtype=float)
        rank = values.ndim - 1 - len(axes)
        if rank not in (1, 2):
            raise ValueError("table values shape inconsistent with axes")
        return cls("table", rank, {"axes": axes, "values": values})

    # -- shape bookkeeping ---------------------------------------------------

    @property
    def m(self):
        if self.family == "constant":
            return self.params["values"].shape[0]
        if self.family == "affine":
            return self.params["c"].shape[0]
        if self.family == "table":
            return self.params["values"].shape[0]
        return self.params["coefs"].shape[0]

    @property
    def n(self):
        if self.family == "constant":
            return self.params["values"].shape[1]
        if self.family == "affine":
            return self.params["c"].shape[1]
        if self.family == "table":
            return self.params["values"].shape[1 + len(self.params["axes"])]
        return self.params["coefs"].shape[1]

    @property
    def d(self):
        if self.rank != 2:
            raise AttributeError("d only defined for rank-2 fields")
        if self.family == "constant":
            return self.params["values"].shape[2]
        if self.family == "table":
            return self.params["values"].shape[-1]
        return self.n  # diagonal families

    # -- evaluation ----------------------------------------------------------

    def __call__(self, x, alpha):
        return self.eval_many(np.asarray(x, dtype=float)[None, :],
                              np.array([alpha]))[0]

    def eval_many(self, X, alphas):
        """Vectorized evaluation; X is (B, n), alphas (B,) int."""
        X = np.maximum(np.asarray(X, dtype=float), 0.0)
        alphas = np.asarray(alphas, dtype=int)
        B = X.shape[0]
        if self.family == "constant":
            return self.params["values"][alphas]
        if self.family == "affine":
            A = self.params["A"][alphas]
            c = self.params["c"][alphas]
            return np.einsum("bij,bj->bi", A, X) + c
        if self.family == "geometric":
            diag = self.params["coefs"][alphas] * X
        elif self.family == "sqrt_power":
            diag = self.params["coefs"][alphas] * np.sqrt(X)
        else:  # table
            return self._eval_table(X, alphas)
        if self.rank == 1:
            return diag
        out = np.zeros((B, self.n, self.n))
        idx = np.arange(self.n)
        out[:, idx, idx] = diag
        return out

    def _eval_table(self, X, alphas):
        axes = self.params["axes"]
        values = self.params["values"]
        B = X.shape[0]
        idx, frac = [], []
        for k, ax in enumerate(axes):
            t = np.clip(X[:, k], ax[0], ax[-1])
            i = np.clip(np.searchsorted(ax, t, side="right") - 1, 0, ax.size - 2)
            idx.append(i)
            frac.append((t - ax[i]) / (ax[i + 1] - ax[i]))
        out = np.zeros((B,) + values.shape[1 + len(axes):])
        for corner in range(1 << len(axes)):
            w = np.ones(B)
            loc = []
            for k in range(len(axes)):
                if corner >> k & 1:
                    w = w * frac[k]
                    loc.append(idx[k] + 1)
                else:
                    w = w * (1.0 - frac[k])
                    loc.append(idx[k])
            out += w.reshape((B,) + (1,) * (out.ndim - 1)) * values[(alphas, *loc)]
        return out

    # -- analytic bounds over the whole closed orthant -----------------------

    def sum_bound(self):
        """sup over the closed orthant of the coordinate sum (rank 1: max_a b.1;
        rank 2: max_a |sigma' 1|); inf when the family is unbounded."""
        if self.family == "constant":
            v = self.params["values"]
            if self.rank == 1:
                return float(np.max(np.sum(v, axis=1)))
            return float(np.max(np.linalg.norm(np.sum(v, axis=1), axis=-1)))
        if self.family == "table":
            v = self.params["values"]
            if self.rank == 1:
                return float(np.max(np.sum(v, axis=-1)))
            return float(np.max(np.linalg.norm(np.sum(v, axis=-2), axis=-1)))
        if self.family == "affine":
            A, c = self.params["A"], self.params["c"]
            if np.all(A == 0):
                return float(np.max(np.sum(c, axis=1)))
            return math.inf
        coefs = self.params["coefs"]
        if np.all(coefs == 0):
            return 0.0
        return math.inf

    def abs_bound(self):
        """sup of max_i |component|; inf when unbounded."""
        if self.family == "constant":
            return float(np.max(np.abs(self.params["values"])))
        if self.family == "table":
            return float(np.max(np.abs(self.params["values"])))
        if self.family == "affine" and np.all(self.params["A"] == 0):
            return float(np.max(np.abs(self.params["c"])))
        if self.family in ("geometric", "sqrt_power") and np.all(
            self.params["coefs"] == 0
        ):
            return 0.0
        return math.inf

    def lipschitz_bound(self):
        """Global Lipschitz constant on the closed orthant; inf if none exists."""
        if self.family == "constant" or (
            self.family in ("geometric", "sqrt_power")
            and np.all(self.params["coefs"] == 0)
        ):
            return 0.0
        if self.family == "affine":
            return float(np.max([np.linalg.norm(a, 2) for a in self.params["A"]]))
        if self.family == "geometric":
            return float(np.max(np.abs(self.params["coefs"])))
        if self.family == "sqrt_power":
            return math.inf  # sqrt is not Lipschitz at 0
        # table: finite slopes cell by cell
        axes = self.params["axes"]
        values = self.params["values"]
        lip = 0.0
        for k, ax in enumerate(axes):
            dv = np.diff(values, axis=1 + k)
            dx = np.diff(ax).reshape((1,) * (1 + k) + (-1,) + (1,) * (dv.ndim - 2 - k))
            lip = max(lip, float(np.max(np.abs(dv / dx), initial=0.0)))
        return lip * len(axes)


@dataclass
class ModelSpec:
    """Full problem datum: dynamics, reward, switching generator, discount."""

    n: int
    m: int
    r: float
    b: CoefficientField
    sigma: CoefficientField
    f: CoefficientField
    Q: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        if self.n < 1 or self.m < 1:
            raise ValidationError("BAD_DIMENSION", "n and m must be positive")
        if not (self.r > 0):
            raise ValidationError("NONPOSITIVE_DISCOUNT", "discount rate must be > 0")
        if self.Q.shape != (self.m, self.m):
            raise ValidationError("BAD_GENERATOR_SHAPE", "Q must be m x m")
        for fld, rank, label in ((self.b, 1, "b"), (self.sigma, 2, "sigma"), (self.f, 1, "f")):
            if fld.rank != rank or fld.n != self.n or fld.m != self.m:
                raise ValidationError(
                    "BAD_FIELD_SHAPE", f"coefficient field {label} inconsistent with (n, m)"
                )

    @property
    def d(self):
        return self.sigma.d

    def validate(self, strict=True, samples=None):
        """Generator + reward checks; returns the first failing result."""
        res = validate_generator(self.Q, strict=strict)
        if not res.ok:
            return res
        if samples is None:
            samples = default_sample_lattice(self.n)
        return validate_reward(self, samples)

    def new_condition_bound(self):
        """kappa_0 with b.1 <= kappa_0 and |sigma'1| <= kappa_0 everywhere,
        or None when no finite bound exists (coefficient sums unbounded)."""
        kb = self.b.sum_bound()
        ks = self.sigma.sum_bound()
        if math.isinf(kb) or math.isinf(ks):
            return None
        return max(kb, ks, 0.0)

    def affine_value_bound(self, x):
        """||f||_inf (kappa0/r + 1.x), the growth envelope of the value function;
        None when the coefficient-sum bound or ||f||_inf is infinite."""
        kappa0 = self.new_condition_bound()
        fmax = self.f.abs_bound()
        if kappa0 is None or math.isinf(fmax):
            return None
        x = np.asarray(x, dtype=float)
        return fmax * (kappa0 / self.r + float(np.sum(x)))

    def permute_regimes(self, perm):
        """Model with regimes relabeled: new regime i is old regime perm[i]."""
        perm = list(perm)
        Q = self.Q[np.ix_(perm, perm)]
        return ModelSpec(
            self.n, self.m, self.r,
            _permute_field(self.b, perm),
            _permute_field(self.sigma, perm),
            _permute_field(self.f, perm),
            Q, name=self.name,
        )


def _permute_field(fld, perm):
    p = dict(fld.params)
    for key in ("values", "coefs", "A", "c"):
        if key in p:
            p[key] = p[key][perm]
    out = CoefficientField(fld.family, fld.rank, p)
    return out


def default_sample_lattice(n, upper=None, points_per_axis=17):
    """Default 17-points-per-axis lattice over [0, upper]^n used by the
    sampling-based refuters."""
    if upper is None:
        upper = np.ones(n)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (n,))
    axes = [np.linspace(0.0, upper[k], points_per_axis) for k in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([mm.ravel() for mm in mesh], axis=-1)


# -- generator and reward validation ----------------------------------------


def validate_generator(Q, strict=True):
    """Accepts iff off-diagonals >= 0, rows sum to 0 (1e-12, scaled), and in
    strict mode every diagonal is < 0."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValidationError("BAD_GENERATOR_SHAPE", "Q must be square")
    m = Q.shape[0]
    scale = max(1.0, float(np.max(np.abs(Q), initial=0.0)))
    for i in range(m):
        for j in range(m):
            if i != j and Q[i, j] < 0:
                return ValidationResult(
                    False, "NEGATIVE_OFF_DIAGONAL",
                    f"q[{i},{j}] = {Q[i, j]} < 0", (i, j),
                )
        if abs(float(np.sum(Q[i]))) > GEN_TOL * scale:
            return ValidationResult(
                False, "ROW_SUM_NONZERO",
                f"row {i} sums to {float(np.sum(Q[i]))}", (i,),
            )
        if strict and not (Q[i, i] < 0):
            return ValidationResult(
                False, "ZERO_DIAGONAL_IN_STRICT_MODE",
                f"q[{i},{i}] = {Q[i, i]} is not negative", (i,),
            )
    return ValidationResult(True)


def validate_reward(model, samples):
    """Sampled check that f is componentwise nonincreasing and finite positive
    at the origin.  Refutes only; acceptance is evidence, not proof."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise ValidationError("EMPTY_SAMPLES", "need a nonempty sample set")
    origin = np.zeros((1, model.n))
    for alpha in range(model.m):
        f0 = model.f.eval_many(origin, np.array([alpha]))[0]
        if not np.all(np.isfinite(f0)) or np.any(f0 <= 0):
            return ValidationResult(
                False, "NONPOSITIVE_AT_ORIGIN",
                f"f(0, {alpha}) = {f0.tolist()}", (alpha,),
            )
        fs = model.f.eval_many(samples, np.full(samples.shape[0], alpha))
        # comparable pairs x <= y must satisfy f(x) >= f(y) - tol
        le = np.all(samples[:, None, :] <= samples[None, :, :] + 1e-15, axis=-1)
        bad = (fs[:, None, :] < fs[None, :, :] - GEN_TOL) & le[:, :, None]
        if np.any(bad):
            i, j, comp = np.argwhere(bad)[0]
            return ValidationResult(
                False, "NOT_NONINCREASING",
                f"f_{comp}({samples[i].tolist()}, {alpha}) < "
                f"f_{comp}({samples[j].tolist()}, {alpha}) with x <= y",
                (int(i), int(j), int(comp), alpha),
            )
    return ValidationResult(True)


@dataclass
class ComparisonReport:
    """Sampled truth of the Lipschitz and coefficient-sum inequalities at a
    supplied kappa_0.  Advisory: sampling can refute, never prove."""

    kappa0: float
    lipschitz_ok: bool
    drift_sum_ok: bool
    diffusion_sum_ok: bool
    worst: dict = field(default_factory=dict)

    @property
    def all_ok(self):
        return self.lipschitz_ok and self.drift_sum_ok and self.diffusion_sum_ok


def check_comparison_conditions(model, kappa0, samples=None, pairs=None):
    """Test |b(x)-b(y)| + |sigma(x)-sigma(y)| <= kappa0 |x-y|, b.1 <= kappa0 and
    |sigma'1| <= kappa0 over sample points/pairs."""
    if not kappa0 > 0:
        raise ValidationError("NONPOSITIVE_PARAMETER", "kappa0 must be > 0")
    if samples is None:
        samples = default_sample_lattice(model.n)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if pairs is None:
        rng = np.random.default_rng(0)
        take = min(len(samples), 400)
        i = rng.integers(0, len(samples), size=take)
        j = rng.integers(0, len(samples), size=take)
        keep = i != j
        pairs = np.stack([samples[i[keep]], samples[j[keep]]], axis=1)
    pairs = np.asarray(pairs, dtype=float)

    ones = np.ones(model.n)
    worst = {}
    drift_ok = True
    diff_ok = True
    for alpha in range(model.m):
        al = np.full(samples.shape[0], alpha)
        bs = model.b.eval_many(samples, al)
        ss = model.sigma.eval_many(samples, al)
        bsum = bs @ ones
        ssum = np.linalg.norm(np.einsum("bij,i->bj", ss, ones), axis=-1)
        k = int(np.argmax(bsum))
        if bsum[k] > kappa0 + 1e-12:
            drift_ok = False
            if "drift_sum" not in worst or bsum[k] > worst["drift_sum"][0]:
                worst["drift_sum"] = (float(bsum[k]), samples[k].tolist(), alpha)
        k = int(np.argmax(ssum))
        if ssum[k] > kappa0 + 1e-12:
            diff_ok = False
            if "diffusion_sum" not in worst or ssum[k] > worst["diffusion_sum"][0]:
                worst["diffusion_sum"] = (float(ssum[k]), samples[k].tolist(), alpha)

    lip_ok = True
    if pairs.size:
        xs, ys = pairs[:, 0, :], pairs[:, 1, :]
        gap = np.linalg.norm(xs - ys, axis=-1)
        keep = gap > 1e-14
        xs, ys, gap = xs[keep], ys[keep], gap[keep]
        for alpha in range(model.m):
            al = np.full(xs.shape[0], alpha)
            db = np.linalg.norm(model.b.eval_many(xs, al) - model.b.eval_many(ys, al), axis=-1)
            dsig = model.sigma.eval_many(xs, al) - model.sigma.eval_many(ys, al)
            ds = np.linalg.norm(dsig.reshape(dsig.shape[0], -1), axis=-1)
            ratio = (db + ds) / gap
            k = int(np.argmax(ratio))
            if ratio[k] > kappa0 + 1e-12:
                lip_ok = False
                if "lipschitz" not in worst or ratio[k] > worst["lipschitz"][0]:
                    worst["lipschitz"] = (float(ratio[k]), xs[k].tolist(), ys[k].tolist(), alpha)
    return ComparisonReport(float(kappa0), lip_ok, drift_ok, diff_ok, worst)


def check_example3_params(mu1, mu2, r, lambda1, lambda2):
    """Parameter window of the two-regime geometric benchmark:
    mu1 < r < mu2 <= (r l1 + (r - mu1)(r + l2)) / (r + l1 - mu1)."""
    vals = (mu1, mu2, r, lambda1, lambda2)
    if not all(math.isfinite(v) for v in vals):
        raise ValidationError("NONPOSITIVE_PARAMETER", "parameters must be finite")
    if r <= 0 or lambda1 <= 0 or lambda2 <= 0 or mu2 <= 0 or mu1 < 0:
        raise ValidationError(
            "NONPOSITIVE_PARAMETER",
            "need r, lambda1, lambda2, mu2 > 0 and mu1 >= 0",
        )
    upper = (r * lambda1 + (r - mu1) * (r + lambda2)) / (r + lambda1 - mu1)
    return bool(mu1 < r < mu2 <= upper)


@dataclass
class LyapunovReport:
    max_generator_value: float
    passes: bool
    worst_point: tuple


def lyapunov_check(psi, model, samples, step=1e-5):
    """Evaluate L psi = b.Dpsi + tr(sigma sigma' D2 psi)/2 + sum_j q_aj psi(x, j)
    at sample points; passes iff the max is <= 1e-8.

    psi(x, alpha) -> float must be evaluable near the samples; derivatives use
    central differences with the given step unless psi provides .grad / .hess.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    worst = -math.inf
    worst_pt = None
    for x in samples:
        psis = np.array([psi(x, j) for j in range(model.m)])
        if not np.all(np.isfinite(psis)):
            raise ValidationError("DERIVATIVE_UNAVAILABLE", f"psi not finite at {x.tolist()}")
        for alpha in range(model.m):
            if hasattr(psi, "grad"):
                g = np.asarray(psi.grad(x, alpha), dtype=float)
                H = np.asarray(psi.hess(x, alpha), dtype=float)
            else:
                g, H = _fd_jet(lambda y: psi(y, alpha), x, step)
            if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
                raise ValidationError(
                    "DERIVATIVE_UNAVAILABLE", f"derivative probe failed at {x.tolist()}"
                )
            bv = model.b(x, alpha)
            sv = model.sigma(x, alpha)
            val = float(bv @ g + 0.5 * np.trace(sv @ sv.T @ H) + model.Q[alpha] @ psis)
            if val > worst:
                worst, worst_pt = val, (x.tolist(), alpha)
    return LyapunovReport(worst, worst <= 1e-8, worst_pt)


def _fd_jet(fn, x, h):
    n = x.size
    g = np.empty(n)
    H = np.empty((n, n))
    f0 = fn(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        fp, fm = fn(x + ei), fn(x - ei)
        g[i] = (fp - fm) / (2 * h)
        H[i, i] = (fp - 2 * f0 + fm) / h**2
    for i in range(n):
        for j in range(i + 1, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            H[i, j] = H[j, i] = (
                fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)
            ) / (4 * h**2)
    return g, H


# -- built-in benchmark models ----------------------------------------------

BUILTIN_NAMES = ("example1", "example2", "example3", "example4")


def builtin_model(name, **overrides):
    """Benchmark model families.

    example1: unit drift, no noise, unit reward (value x+1, pay out everywhere)
    example2: pure diffusion sqrt(2) dW; the QVI has no constrained solution
    example3: two-regime geometric dynamics with switching, unit reward
    example4: unit drift with 2 sqrt(x) noise (squared-Bessel type), unit reward
    """
    if name == "example1":
        r = overrides.pop("r", 1.0)
        _reject_extra(overrides)
        return ModelSpec(
            1, 1, r,
            CoefficientField.constant([[1.0]]),
            CoefficientField.constant([[[0.0]]]),
            CoefficientField.constant([[1.0]]),
            np.zeros((1, 1)), name="example1",
        )
    if name == "example2":
        r = overrides.pop("r", 1.0)
        _reject_extra(overrides)
        return ModelSpec(
            1, 1, r,
            CoefficientField.constant([[0.0]]),
            CoefficientField.constant([[[math.sqrt(2.0)]]]),
            CoefficientField.constant([[1.0]]),
            np.zeros((1, 1)), name="example2",
        )
    if name == "example3":
        mu1 = overrides.pop("mu1", 0.0)
        mu2 = overrides.pop("mu2", 0.15)
        r = overrides.pop("r", 0.1)
        lambda1 = overrides.pop("lambda1", 1.0)
        lambda2 = overrides.pop("lambda2", 1.0)
        sigma1 = overrides.pop("sigma1", 0.2)
        sigma2 = overrides.pop("sigma2", 0.2)
        _reject_extra(overrides)
        Q = np.array([[-lambda1, lambda1], [lambda2, -lambda2]])
        return ModelSpec(
            1, 2, r,
            CoefficientField.geometric([[mu1], [mu2]]),
            CoefficientField.geometric([[sigma1], [sigma2]], rank=2),
            CoefficientField.constant([[1.0], [1.0]]),
            Q, name="example3",
        )
    if name == "example4":
        r = overrides.pop("r", 1.0)
        _reject_extra(overrides)
        return ModelSpec(
            1, 1, r,
            CoefficientField.constant([[1.0]]),
            CoefficientField.sqrt_power([[2.0]], rank=2),
            CoefficientField.constant([[1.0]]),
            np.zeros((1, 1)), name="example4",
        )
    raise ValidationError("UNKNOWN_BUILTIN", f"no builtin model named {name!r}")


def _reject_extra(overrides):
    if overrides:
        raise ValidationError(
            "UNKNOWN_OVERRIDE", f"unsupported overrides: {sorted(overrides)}"
        )


# -- TOML model configuration ------------------------------------------------


def load_model_toml(path):
    """Build a ModelSpec from a TOML model file.

    [builtin] name expands a benchmark family first (with overrides from the
    same section); explicit [model]/[drift]/[diffusion]/[reward]/[generator]
    sections replace the corresponding pieces.
    """
    try:
        import tomllib
    except ImportError:  # Python 3.10
        import tomli as tomllib

    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    return model_from_config(cfg)


def model_from_config(cfg):
    base = None
    if "builtin" in cfg:
        sec = dict(cfg["builtin"])
        name = sec.pop("name")
        base = builtin_model(name, **sec)
    explicit = {"model", "drift", "diffusion", "reward", "generator"} & set(cfg)
    if base is not None and not explicit:
        return base

    if base is not None:
        n, m, r = base.n, base.m, base.r
    else:
        n = m = r = None
    if "model" in cfg:
        n = int(cfg["model"].get("n", n))
        m = int(cfg["model"].get("m", m))
        r = float(cfg["model"].get("r", r))
    if n is None or m is None or r is None:
        raise ValidationError("BAD_CONFIG", "need [model] n, m, r or a [builtin]")

    def fld(section, fallback, rank):
        if section not in cfg:
            if fallback is None:
                raise ValidationError("BAD_CONFIG", f"missing [{section}]")
            return fallback
        return _field_from_config(cfg[section], rank)

    b = fld("drift", base.b if base else None, 1)
    sig = fld("diffusion", base.sigma if base else None, 2)
    f = fld("reward", base.f if base else None, 1)
    Q = np.asarray(cfg["generator"]["rows"], dtype=float) if "generator" in cfg else (
        base.Q if base else None
    )
    if Q is None:
        raise ValidationError("BAD_CONFIG", "missing [generator]")
    return ModelSpec(n, m, r, b, sig, f, Q, name=cfg.get("builtin", {}).get("name", ""))


def _field_from_config(sec, rank):
    family = sec["family"]
    if family == "constant":
        return CoefficientField.constant(sec["values"])
    if family == "affine":
        return CoefficientField.affine(sec["A"], sec["c"])
    if family == "geometric":
        return CoefficientField.geometric(sec["coefs"], rank=rank)
    if family == "sqrt_power":
        return CoefficientField.sqrt_power(sec["coefs"], rank=rank)
    if family == "table":
        return CoefficientField.table(sec["axes"], sec["values"])
    raise ValidationError("BAD_CONFIG", f"unknown coefficient family {family!r}")
