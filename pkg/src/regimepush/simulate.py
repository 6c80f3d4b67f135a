"""Monte Carlo engine for the controlled regime-switching diffusion.

Paths are mutually independent with per-path streams derived from the master
seed (SeedSequence over (master, path index)), so estimates are invariant to
batch size, execution order, and backend.  The hot Euler/projection loop runs
in the compiled kernel when available, with a numpy lockstep fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _engine_py as engine_py
from .backend import get_engine
from .grid import Grid, ValueField
from .model import ModelSpec, RegimePushError, validate_generator
from .solver import PolicyField, extract_nonintervention_region

__all__ = [
    "SimOptions",
    "ControlledPath",
    "PayoffEstimate",
    "SimulationError",
    "RegionPolicy",
    "ExplicitControl",
    "LumpThenIntegral",
    "simulate_chain",
    "simulate_controlled_path",
    "estimate_payoff",
    "dpp_sanity",
]

HORIZON_TAIL_FRACTION = 1e-3
BATCH_MEMORY_BYTES = 128 * 2**20


class SimulationError(RegimePushError):
    pass


@dataclass
class SimOptions:
    dt: float = 1e-3
    horizon: float | None = None  # None: from the affine growth envelope
    paths: int = 10_000
    seed: int = 0
    mode: str = "policy_region"  # or "explicit"

    def __post_init__(self):
        if self.dt <= 0:
            raise SimulationError("BAD_OPTIONS", "dt must be positive")
        if self.horizon is not None and self.horizon <= 0:
            raise SimulationError("BAD_OPTIONS", "horizon must be positive")
        if self.paths < 1:
            raise SimulationError("BAD_OPTIONS", "need at least one path")
        if self.mode not in ("policy_region", "explicit"):
            raise SimulationError("BAD_OPTIONS", f"unknown mode {self.mode!r}")


@dataclass
class ControlledPath:
    """One simulated trajectory with its discounted-payoff accumulator."""

    t: np.ndarray
    X: np.ndarray           # (K+1, n)
    alpha: np.ndarray       # (K+1,)
    Z: np.ndarray           # (K+1, n) cumulative, initial jump included
    initial_jump: np.ndarray
    payoff: float
    flags: int = 0

    @property
    def z_nondecreasing(self):
        return bool(np.all(np.diff(self.Z, axis=0) >= -1e-15)) and bool(
            np.all(self.initial_jump >= -1e-15)
        )

    @property
    def state_nonnegative(self):
        return bool(np.all(self.X >= -1e-12))


@dataclass
class PayoffEstimate:
    mean: float
    stderr: float
    paths: int
    tail_bound: float | None
    horizon: float
    dt: float
    seed: int
    mode: str
    backend: str = ""


# -- policy sources ------------------------------------------------------------


class RegionPolicy:
    """Pushes realized as projection onto the closure of the continue region
    of a solved policy (indicator interpolated multilinearly, threshold 0.5)."""

    kind = "policy_region"

    def __init__(self, policy: PolicyField):
        self.grid = policy.grid
        self.m = policy.m
        region, _ = extract_nonintervention_region(policy)
        self.indicator = np.ascontiguousarray(region.T.astype(float))  # (m, K)

    def pack(self):
        g = self.grid
        return (
            self.indicator,
            tuple(g.shape),
            np.ascontiguousarray(g.h),
            np.ascontiguousarray(g.upper),
        )


class ExplicitControl:
    """Caller-supplied control rule.

    Subclasses implement build_batch(t, W, x0, regimes) -> (z0 (B, n),
    dz (B, K, n)); increments may be any sign (recorded in path flags).
    """

    kind = "explicit"

    def build_batch(self, t, W, x0, regimes):
        raise NotImplementedError


class LumpThenIntegral(ExplicitControl):
    """Initial lump of the full start state, then deterministic cumulative
    schedule Z(t): increments are exact differences of the schedule."""

    def __init__(self, schedule):
        self.schedule = schedule  # scalar t -> cumulative pushed amount

    def build_batch(self, t, W, x0, regimes):
        B = W.shape[0]
        n = x0.size
        zs = np.array([self.schedule(tk) for tk in t])
        dz1 = np.diff(zs)
        z0 = np.tile(x0, (B, 1))
        # deterministic schedule: one shared increment row for the whole batch
        dz = np.zeros((1, t.size - 1, n))
        dz[0, :, 0] = dz1
        return z0, dz


# -- chain simulation -----------------------------------------------------------


def simulate_chain(Q, T, seed, alpha0=0):
    """Piecewise-constant regime path on [0, T]: jump times and regimes.

    Holding time in regime i is Exponential(-q_ii) (infinite when q_ii = 0);
    jump targets drawn with probability q_ij / (-q_ii).
    """
    res = validate_generator(Q, strict=False)
    if not res.ok:
        raise SimulationError(res.code, res.message)
    rng = np.random.default_rng(np.random.SeedSequence(_as_entropy(seed)))
    return _chain_with_rng(np.asarray(Q, dtype=float), float(T), int(alpha0), rng)


def _chain_with_rng(Q, T, alpha0, rng):
    times = [0.0]
    regs = [alpha0]
    t = 0.0
    a = alpha0
    m = Q.shape[0]
    while True:
        rate = -Q[a, a]
        if rate <= 0.0:
            break
        t = t + rng.exponential(1.0 / rate)
        if t >= T:
            break
        u = rng.random() * rate
        acc = 0.0
        nxt = a
        for j in range(m):
            if j == a:
                continue
            acc += Q[a, j]
            if u < acc:
                nxt = j
                break
        else:
            nxt = j
        a = nxt
        times.append(t)
        regs.append(a)
    return np.array(times), np.array(regs, dtype=np.int64)


def _chain_on_steps(Q, t_grid, alpha0, rng):
    times, regs = _chain_with_rng(Q, float(t_grid[-1]) if t_grid.size else 0.0, alpha0, rng)
    idx = np.searchsorted(times, t_grid, side="right") - 1
    return regs[idx].astype(np.int8)


# -- path generation -------------------------------------------------------------


def _as_entropy(seed):
    return seed if isinstance(seed, (list, tuple)) else [int(seed)]


def path_seed(master, index):
    """Fixed splitting of the master seed into per-path streams."""
    return np.random.SeedSequence([int(master), int(index)])


def resolve_horizon(model, x0, opts):
    """Explicit horizon, or ln(1000)/r so the discounted affine envelope tail
    is 0.1% of the value scale; None envelope means the horizon is required."""
    bound = model.affine_value_bound(x0)
    if opts.horizon is not None:
        T = float(opts.horizon)
    else:
        if bound is None:
            raise SimulationError(
                "HORIZON_REQUIRED",
                "no affine growth envelope for this model; pass an explicit horizon",
            )
        T = math.log(1.0 / HORIZON_TAIL_FRACTION) / model.r
    tail = None if bound is None else math.exp(-model.r * T) * bound
    return T, tail


def _pack_model(model):
    fam_codes = {"constant": engine_py.FAM_CONSTANT, "geometric": engine_py.FAM_GEOMETRIC,
                 "sqrt_power": engine_py.FAM_SQRT, "affine": engine_py.FAM_AFFINE}

    def pack_vector(fld):
        code = fam_codes.get(fld.family)
        if code is None:
            raise SimulationError(
                "UNSUPPORTED_FIELD",
                f"simulation supports closed-form coefficient families, not {fld.family!r}",
            )
        dummyA = np.zeros((fld.m, fld.n, fld.n))
        if code == engine_py.FAM_AFFINE:
            return code, np.ascontiguousarray(fld.params["c"]), np.ascontiguousarray(fld.params["A"])
        if code == engine_py.FAM_CONSTANT:
            return code, np.ascontiguousarray(fld.params["values"]), dummyA
        return code, np.ascontiguousarray(fld.params["coefs"]), dummyA

    def pack_sigma(fld):
        code = fam_codes.get(fld.family)
        if code is None or code == engine_py.FAM_AFFINE:
            raise SimulationError(
                "UNSUPPORTED_FIELD", f"unsupported diffusion family {fld.family!r}"
            )
        if code == engine_py.FAM_CONSTANT:
            full = np.ascontiguousarray(fld.params["values"])
            return code, full, np.zeros((fld.m, fld.n))
        coefs = np.ascontiguousarray(fld.params["coefs"])
        return code, np.zeros((fld.m, fld.n, fld.n)), coefs

    bfam, bcoef, bA = pack_vector(model.b)
    sfam, sfull, scoef = pack_sigma(model.sigma)
    ffam, fcoef, fA = pack_vector(model.f)
    return (bfam, bcoef, bA, sfam, sfull, scoef, ffam, fcoef, fA)


def _noise_dim(model):
    """Columns of driving noise to draw; 0 when sigma vanishes identically
    (the draws would never enter the arithmetic)."""
    sig = model.sigma
    if sig.family == "constant" and not np.any(sig.params["values"]):
        return 0
    if sig.family in ("geometric", "sqrt_power") and not np.any(sig.params["coefs"]):
        return 0
    return sig.d if sig.family == "constant" else model.n


def _batch_size(K, d, n, explicit_shared, requested):
    per_path = K * d * 8 + K + 64
    if not explicit_shared:
        per_path += K * n * 8
    cap = max(1, BATCH_MEMORY_BYTES // max(per_path, 1))
    return int(min(requested, cap))


def _run_batches(model, source, x0, alpha0, opts, n_paths, master_seed,
                 record_first=0, engine=None):
    """Evolve n_paths paths in batches; returns stacked outputs in path order."""
    eng = engine or get_engine()
    pack = _pack_model(model)
    T, tail = resolve_horizon(model, x0, opts)
    K = max(1, int(round(T / opts.dt)))
    dt = opts.dt
    d = _noise_dim(model)
    n = model.n
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,) or np.any(x0 < 0):
        raise SimulationError("BAD_STATE", "x0 must be a nonnegative n-vector")
    t_grid = np.arange(K + 1) * dt
    discounts = np.exp(-model.r * t_grid)

    if source.kind == "policy_region":
        mode = engine_py.MODE_POLICY
        region_pack = source.pack()
    else:
        mode = engine_py.MODE_EXPLICIT
        region_pack = None

    payoffs = np.empty(n_paths)
    finals = np.empty((n_paths, n))
    ztotals = np.empty((n_paths, n))
    jumps = np.empty((n_paths, n))
    flags = np.empty(n_paths, dtype=np.int64)
    traces = []

    # a chain with no negative diagonal never jumps and consumes no draws
    chain_frozen = not np.any(np.diagonal(model.Q) < 0)

    explicit_shared = mode == engine_py.MODE_EXPLICIT and isinstance(
        source, LumpThenIntegral
    )
    B = _batch_size(K, d, n, explicit_shared, n_paths)
    start = 0
    while start < n_paths:
        stop = min(start + B, n_paths)
        nb = stop - start
        normals = np.empty((nb, K, d))
        if chain_frozen:
            regimes = np.full((nb, K + 1), alpha0, dtype=np.int8)
        else:
            regimes = np.empty((nb, K + 1), dtype=np.int8)
        for i in range(nb):
            rng = np.random.default_rng(path_seed(master_seed, start + i))
            if not chain_frozen:
                regimes[i] = _chain_on_steps(model.Q, t_grid, alpha0, rng)
            normals[i] = rng.standard_normal((K, d))
        if mode == engine_py.MODE_EXPLICIT:
            W = np.concatenate(
                [np.zeros((nb, 1, d)), np.cumsum(normals * math.sqrt(dt), axis=1)], axis=1
            )
            z0, dz = source.build_batch(t_grid, W, x0, regimes)
        else:
            z0 = np.zeros((nb, n))
            dz = np.zeros((nb, 0, n))
        record = record_first > start
        out = eng.evolve_batch(
            mode, pack, region_pack, normals, regimes, x0, dt, math.sqrt(dt),
            discounts, z0, dz, record=record,
        )
        pay, xf, zt, jump, fl, trace = out
        payoffs[start:stop] = pay
        finals[start:stop] = xf
        ztotals[start:stop] = zt
        jumps[start:stop] = jump
        flags[start:stop] = fl
        if record:
            upto = min(record_first - start, nb)
            for i in range(upto):
                traces.append(
                    ControlledPath(
                        t_grid, trace[0][i], regimes[i].astype(int), trace[1][i],
                        jump[i], float(pay[i]), int(fl[i]),
                    )
                )
        start = stop

    if np.any(flags & engine_py.FLAG_NAN):
        bad = int(np.nonzero(flags & engine_py.FLAG_NAN)[0][0])
        raise SimulationError("NAN_STATE", f"path {bad} blew up (NaN/Inf state)")
    return payoffs, finals, ztotals, jumps, flags, traces, T, tail, eng


def simulate_controlled_path(model, policy_source, x0, alpha0, opts, seed_index=0,
                             master_seed=None):
    """One controlled path with its full trajectory recorded.

    policy_source: RegionPolicy or an ExplicitControl rule.  The path is
    identical to path `seed_index` of estimate_payoff under the same options.
    """
    master = opts.seed if master_seed is None else master_seed
    # record runs through the fallback engine; streams and arithmetic match the kernel
    out = _run_batches(
        model, policy_source, np.asarray(x0, dtype=float), alpha0, opts,
        n_paths=seed_index + 1, master_seed=master, record_first=seed_index + 1,
        engine=engine_py,
    )
    return out[5][seed_index]


def estimate_payoff(model, policy_source, x0, alpha0, opts):
    """Mean/SE of the discounted payoff over opts.paths independent paths."""
    payoffs, _, _, _, flags, _, T, tail, eng = _run_batches(
        model, policy_source, np.asarray(x0, dtype=float), alpha0, opts,
        n_paths=opts.paths, master_seed=opts.seed,
    )
    mean = float(np.mean(payoffs))
    stderr = float(np.std(payoffs, ddof=1) / math.sqrt(opts.paths)) if opts.paths > 1 else 0.0
    return PayoffEstimate(
        mean, stderr, opts.paths, tail, T, opts.dt, opts.seed, opts.mode,
        backend=eng.BACKEND_NAME,
    )


@dataclass
class DppReport:
    estimate: float
    stderr: float
    value_at_start: float
    horizon: float
    allowance: float
    upper_ok: bool
    lower_ok: bool


def dpp_sanity(model, value_field: ValueField, policy_source, x0, alpha0, t,
               opts, allowance=None):
    """Monte Carlo check of the programming identity at a fixed time t:
    E[int_0^t e^{-rs} f . dZ + e^{-rt} V(X_t, alpha_t)] vs V(x0, alpha0).

    upper_ok: estimate <= V + 3 SE + allowance (discretized supremum cannot
    beat V); lower_ok: estimate >= V - 3 SE - allowance (the extracted policy
    is the candidate optimizer).
    """
    x0 = np.asarray(x0, dtype=float)
    v0 = value_field.interp(x0, alpha0)
    if allowance is None:
        h = float(np.max(value_field.grid.h))
        allowance = 0.5 * math.sqrt(opts.dt) + 2.0 * h
    if t <= 0:
        return DppReport(v0, 0.0, v0, 0.0, allowance, True, True)
    run_opts = SimOptions(dt=opts.dt, horizon=t, paths=opts.paths, seed=opts.seed,
                          mode=opts.mode)
    payoffs, finals, _, _, _, _, T, _, _ = _run_batches(
        model, policy_source, x0, alpha0, run_opts, n_paths=run_opts.paths,
        master_seed=run_opts.seed,
    )
    # terminal regimes: replay chains cheaply from the same per-path streams
    K = max(1, int(round(T / run_opts.dt)))
    term_alpha = np.empty(run_opts.paths, dtype=int)
    for i in range(run_opts.paths):
        rng = np.random.default_rng(path_seed(run_opts.seed, i))
        regs = _chain_on_steps(model.Q, np.array([0.0, K * run_opts.dt]), alpha0, rng)
        term_alpha[i] = regs[-1]
    cont = value_field.interp_many(np.maximum(finals, 0.0), term_alpha)
    total = payoffs + math.exp(-model.r * T) * cont
    mean = float(np.mean(total))
    se = float(np.std(total, ddof=1) / math.sqrt(run_opts.paths)) if run_opts.paths > 1 else 0.0
    return DppReport(
        mean, se, float(v0), T, float(allowance),
        mean <= v0 + 3 * se + allowance,
        mean >= v0 - 3 * se - allowance,
    )
