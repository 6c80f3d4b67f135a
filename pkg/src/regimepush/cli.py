"""Command-line front end: solve / simulate / verify / benchmark.

Exit codes: 0 success, 1 input or validation error, 2 numerical
non-convergence, 3 internal error.  All emitted JSON carries a spec_version
and an options echo sufficient to reproduce the run; no timestamps, so
identical runs are byte-identical.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback

import numpy as np

from . import bench, io
from .benchmarks import (
    BENCHMARK_NAMES,
    SquaredNoisePayout,
    benchmark_case,
    check_boundary_subsolution,
    check_interior_residual,
    named_candidate,
    unit_rate_payout,
)
from .grid import Grid
from .model import (
    ModelSpec,
    RegimePushError,
    ValidationError,
    builtin_model,
    load_model_toml,
)
from .simulate import (
    RegionPolicy,
    SimOptions,
    SimulationError,
    dpp_sanity,
    estimate_payoff,
    simulate_controlled_path,
)
from .solver import SolveError, SolveOptions, extract_nonintervention_region, solve
from .verify import run_field_checks

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2
EXIT_INTERNAL = 3


def _add_model_args(p):
    p.add_argument("--model", help="TOML model file")
    p.add_argument("--builtin", choices=BENCHMARK_NAMES, help="built-in benchmark model")


def _add_grid_args(p):
    p.add_argument("--grid", help="node counts per axis, comma separated")
    p.add_argument("--xmax", help="upper bounds per axis, comma separated")


def _add_solve_args(p):
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--boundary", choices=["neumann", "dirichlet", "extrapolate"],
                   default="neumann",
                   help="outer boundary: gradient condition D_k V = f_k (default), "
                        "affine Dirichlet cap, or zero-curvature extrapolation")


def _add_sim_args(p):
    p.add_argument("--x0", help="start state, comma separated", default=None)
    p.add_argument("--alpha0", type=int, default=0)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="regimepush",
        description="Singular-control solver and simulator for regime-switching "
                    "diffusions on the positive orthant",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve the variational system on a grid")
    _add_model_args(ps)
    _add_grid_args(ps)
    _add_solve_args(ps)
    ps.add_argument("--out", default=".")

    pm = sub.add_parser("simulate", help="Monte Carlo payoff of a policy")
    _add_model_args(pm)
    _add_sim_args(pm)
    pm.add_argument("--mode", choices=["auto", "region", "explicit"], default="auto")
    pm.add_argument("--dump-paths", type=int, default=0, metavar="K",
                    help="write the first K path trajectories as CSV")
    pm.add_argument("--out", default=".")

    pv = sub.add_parser("verify", help="check a solved field or a named candidate")
    _add_model_args(pv)
    _add_grid_args(pv)
    pv.add_argument("--candidate", help="named closed-form candidate (see docs)")
    pv.add_argument("--candidate-params", default="",
                    help="comma separated k=v parameters for the candidate")
    pv.add_argument("--tol", type=float, default=1e-8)
    _add_sim_args(pv)
    pv.add_argument("--out", default=".")

    pb = sub.add_parser("benchmark", help="run the benchmark suite end to end")
    pb.add_argument("--grid-halve", type=int, default=0, metavar="K",
                    help="also run a K-level grid-halving convergence study")
    pb.add_argument("--json", action="store_true", help="machine-readable output")
    pb.add_argument("--seed", type=int, default=20240)
    pb.add_argument("--no-mc", action="store_true", help="skip the Monte Carlo legs")
    pb.add_argument("--out", default=None)
    return ap


# -- shared resolution ----------------------------------------------------------


def resolve_model(args) -> ModelSpec:
    if args.model:
        if not os.path.exists(args.model):
            raise ValidationError("MISSING_FILE", f"model file not found: {args.model}")
        return load_model_toml(args.model)
    if args.builtin:
        return builtin_model(args.builtin)
    raise ValidationError("BAD_CONFIG", "need --model or --builtin")


def resolve_grid(args, model):
    default = benchmark_case(args.builtin).grid if args.builtin else None
    if args.grid is None and args.xmax is None and default is not None:
        return default
    if args.xmax is None or args.grid is None:
        if default is None:
            raise ValidationError("BAD_CONFIG", "need --grid and --xmax")
        upper = default.upper if args.xmax is None else _floats(args.xmax)
        counts = default.counts if args.grid is None else _ints(args.grid)
        return Grid(upper, counts)
    return Grid(_floats(args.xmax), _ints(args.grid))


def _floats(s):
    return [float(v) for v in str(s).split(",")]


def _ints(s):
    return [int(v) for v in str(s).split(",")]


def _solve_options(args):
    boundary = {"neumann": "gradient_neumann", "dirichlet": "affine_dirichlet",
                "extrapolate": "extrapolate"}[args.boundary]
    return SolveOptions(tol=args.tol, max_iters=args.max_iters, boundary=boundary)


def _sim_options(args, mode):
    return SimOptions(dt=args.dt, horizon=args.horizon, paths=args.paths,
                      seed=args.seed, mode=mode)


def _echo(args, skip=("command",)):
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# -- subcommands ------------------------------------------------------------------


def cmd_solve(args):
    model = resolve_model(args)
    grid = resolve_grid(args, model)
    opts = _solve_options(args)
    outdir = io.ensure_outdir(args.out)
    fld, policy, report = solve(model, grid, opts)
    region, boundary = extract_nonintervention_region(policy)
    io.write_value_csv(os.path.join(outdir, "value.csv"), fld)
    io.write_policy_csv(os.path.join(outdir, "policy.csv"), policy)
    io.write_boundary_csv(os.path.join(outdir, "boundary.csv"), grid, boundary)
    io.write_json(os.path.join(outdir, "report.json"), {
        "converged": report.converged,
        "iterations": report.iterations,
        "residual": report.residual,
        "policy_changes": report.policy_changes,
        "unknowns": report.unknowns,
        "options": _echo(args),
    })
    if not report.converged:
        print(f"solve did not converge in {report.iterations} iterations "
              f"(residual {report.residual:.3e})", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"converged in {report.iterations} iterations, "
          f"residual {report.residual:.3e}, outputs in {outdir}")
    return EXIT_OK


def _explicit_rule(name):
    if name == "example1":
        return unit_rate_payout()
    if name == "example4":
        return SquaredNoisePayout()
    raise ValidationError(
        "BAD_CONFIG", f"no named explicit control for {name!r}; use region mode"
    )


def cmd_simulate(args):
    model = resolve_model(args)
    outdir = io.ensure_outdir(args.out)
    policy_path = os.path.join(outdir, "policy.csv")
    mode = args.mode
    if mode == "auto":
        mode = "region" if os.path.exists(policy_path) else "explicit"
    if mode == "region":
        if not os.path.exists(policy_path):
            raise ValidationError(
                "MISSING_FILE", f"policy file not found: {policy_path}"
            )
        _, policy = io.read_policy_csv(policy_path)
        source = RegionPolicy(policy)
        sim_mode = "policy_region"
    else:
        source = _explicit_rule(args.builtin)
        sim_mode = "explicit"
    if args.x0 is None:
        raise ValidationError("BAD_CONFIG", "need --x0")
    x0 = _floats(args.x0)
    opts = _sim_options(args, sim_mode)
    est = estimate_payoff(model, source, x0, args.alpha0, opts)
    io.write_json(os.path.join(outdir, "estimate.json"), {
        "mean": est.mean,
        "stderr": est.stderr,
        "paths": est.paths,
        "tail_bound": est.tail_bound,
        "horizon": est.horizon,
        "dt": est.dt,
        "seed": est.seed,
        "mode": est.mode,
        "backend": est.backend,
        "options": _echo(args),
    })
    for k in range(args.dump_paths):
        path = simulate_controlled_path(model, source, x0, args.alpha0, opts,
                                        seed_index=k)
        _dump_path_csv(os.path.join(outdir, f"path_{k:04d}.csv"), path)
    print(f"payoff estimate {est.mean:.6g} +- {est.stderr:.2g} "
          f"({est.paths} paths, backend {est.backend})")
    return EXIT_OK


def _dump_path_csv(path, cp):
    n = cp.X.shape[1]
    with open(path, "w", newline="") as fh:
        cols = ["t", "alpha"] + [f"x{k+1}" for k in range(n)] + [f"z{k+1}" for k in range(n)]
        fh.write(",".join(cols) + "\n")
        for k in range(cp.t.size):
            row = [io._fmt(cp.t[k]), str(int(cp.alpha[k]))]
            row += [io._fmt(v) for v in cp.X[k]]
            row += [io._fmt(v) for v in cp.Z[k]]
            fh.write(",".join(row) + "\n")


def _parse_params(s):
    out = {}
    if s:
        for part in s.split(","):
            k, v = part.split("=")
            out[k.strip()] = float(v)
    return out


def cmd_verify(args):
    model = resolve_model(args)
    outdir = io.ensure_outdir(args.out)
    checks = {}
    ok = True

    if args.candidate:
        if not args.builtin:
            raise ValidationError("BAD_CONFIG", "--candidate needs --builtin")
        cand = named_candidate(args.builtin, args.candidate,
                               **_parse_params(args.candidate_params))
        hi = benchmark_case(args.builtin).grid.upper[0]
        samples = np.linspace(0.05, 0.95 * hi, 120)[:, None]
        interior = check_interior_residual(cand, model, samples)
        checks["interior_residual"] = {
            "passed": interior <= 1e-6, "worst": interior,
        }
        rep = check_boundary_subsolution(cand, model, np.zeros(model.n))
        checks["boundary_subsolution"] = {
            "passed": rep.passed, "witness": rep.witness,
            "probes_valid": rep.probes_valid,
        }
        ok = checks["interior_residual"]["passed"] and rep.passed
    else:
        value_path = os.path.join(outdir, "value.csv")
        if not os.path.exists(value_path):
            raise ValidationError("MISSING_FILE", f"value file not found: {value_path}")
        _, fld = io.read_value_csv(value_path)
        for res in run_field_checks(fld, model, args.tol):
            checks[res.name] = res.as_dict()
            ok = ok and res.passed
        policy_path = os.path.join(outdir, "policy.csv")
        if os.path.exists(policy_path) and args.paths > 0:
            _, policy = io.read_policy_csv(policy_path)
            try:
                x0 = _floats(args.x0) if args.x0 else (0.5 * fld.grid.upper).tolist()
                dpp = dpp_sanity(
                    model, fld, RegionPolicy(policy), x0, args.alpha0, 1.0,
                    SimOptions(dt=args.dt, paths=min(args.paths, 500),
                               seed=args.seed, horizon=args.horizon),
                )
                checks["dpp_sanity"] = {
                    "passed": dpp.upper_ok and dpp.lower_ok,
                    "estimate": dpp.estimate, "stderr": dpp.stderr,
                    "value": dpp.value_at_start, "allowance": dpp.allowance,
                }
                ok = ok and checks["dpp_sanity"]["passed"]
            except SimulationError as exc:
                checks["dpp_sanity"] = {"passed": True, "skipped": str(exc)}

    io.write_json(os.path.join(outdir, "verify.json"),
                  {"checks": checks, "all_passed": ok, "options": _echo(args)})
    for name, res in checks.items():
        print(f"{name}: {'pass' if res.get('passed') else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_benchmark(args):
    result = bench.run_suite(grid_halve=args.grid_halve, seed=args.seed,
                             with_mc=not args.no_mc)
    if args.json:
        import json
        payload = io._plain({"spec_version": io.SPEC_VERSION, **result})
        print(json.dumps(payload, sort_keys=True, indent=2))
    else:
        print(bench.format_table(result))
    if args.out:
        io.write_json(os.path.join(io.ensure_outdir(args.out), "benchmark.json"),
                      result)
    return EXIT_OK if result["all_ok"] else EXIT_NUMERICAL


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {"solve": cmd_solve, "simulate": cmd_simulate,
                "verify": cmd_verify, "benchmark": cmd_benchmark}
    try:
        return handlers[args.command](args)
    except (ValidationError, SimulationError) as exc:
        if getattr(exc, "code", "") in ("SINGULAR_SYSTEM",):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolveError as exc:
        code = EXIT_INPUT if exc.code in (
            "NEGATIVE_OFF_DIAGONAL", "ROW_SUM_NONZERO", "ZERO_DIAGONAL_IN_STRICT_MODE",
            "NOT_NONINCREASING", "NONPOSITIVE_AT_ORIGIN", "H1_VIOLATED",
        ) else EXIT_NUMERICAL
        print(f"error: {exc}", file=sys.stderr)
        return code
    except RegimePushError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
