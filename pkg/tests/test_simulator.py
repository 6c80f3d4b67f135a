import math

import numpy as np
import pytest

from regimepush import backend
from regimepush.grid import Grid
from regimepush.model import builtin_model
from regimepush.benchmarks import SquaredNoisePayout, unit_rate_payout, linear_rate_payout
from regimepush.simulate import (
    LumpThenIntegral,
    RegionPolicy,
    SimOptions,
    SimulationError,
    dpp_sanity,
    estimate_payoff,
    simulate_chain,
    simulate_controlled_path,
    _run_batches,
)
from regimepush.solver import PolicyField, solve


@pytest.fixture(scope="module")
def ex3_policy():
    model = builtin_model("example3")
    _, policy, _ = solve(model, Grid([10.0], [801]))
    return model, policy


class TestChain:
    def test_zero_generator_never_jumps(self):
        times, regs = simulate_chain(np.zeros((2, 2)), 100.0, seed=1, alpha0=1)
        assert times.tolist() == [0.0]
        assert regs.tolist() == [1]

    def test_occupation_matches_stationary_distribution(self):
        # pi Q = 0 for Q = [[-1,1],[2,-2]] gives pi = (2/3, 1/3)
        T = 20_000.0
        times, regs = simulate_chain([[-1.0, 1.0], [2.0, -2.0]], T, seed=7)
        occ = np.zeros(2)
        for k in range(len(times) - 1):
            occ[regs[k]] += times[k + 1] - times[k]
        occ[regs[-1]] += T - times[-1]
        frac = occ[0] / T
        n_jumps = len(times)
        ci = 3.0 * math.sqrt(2.0 / 3.0 * 1.0 / 3.0 / n_jumps) * 2.0
        assert abs(frac - 2.0 / 3.0) <= max(ci, 0.02)

    def test_same_seed_identical_jump_times(self):
        a = simulate_chain([[-1.0, 1.0], [2.0, -2.0]], 50.0, seed=123)
        b = simulate_chain([[-1.0, 1.0], [2.0, -2.0]], 50.0, seed=123)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_invalid_generator_rejected(self):
        with pytest.raises(SimulationError):
            simulate_chain([[-1.0, 0.5], [2.0, -2.0]], 1.0, seed=0)


class TestExplicitControls:
    def test_linear_rate_payout_matches_quadrature(self):
        # lump x then rate-t schedule: payoff -> x + 1 - e^{-T}(T+1)
        model = builtin_model("example1")
        T = 6.0
        opts = SimOptions(dt=1e-3, horizon=T, paths=1, seed=0, mode="explicit")
        path = simulate_controlled_path(model, linear_rate_payout(), [1.5], 0, opts)
        exact = 1.5 + 1.0 - math.exp(-T) * (T + 1.0)
        assert abs(path.payoff - exact) <= 5.0 * opts.dt
        assert path.initial_jump[0] == 1.5
        assert path.z_nondecreasing

    def test_unit_rate_payout_matches_quadrature(self):
        model = builtin_model("example1")
        T = 6.0
        opts = SimOptions(dt=1e-3, horizon=T, paths=1, seed=0, mode="explicit")
        path = simulate_controlled_path(model, unit_rate_payout(), [1.0], 0, opts)
        exact = 1.0 + 1.0 - math.exp(-T)
        assert abs(path.payoff - exact) <= 5.0 * opts.dt
        # unit drift exactly refills the unit-rate payout: X pinned at 0
        assert np.abs(path.X).max() <= 1e-12

    def test_squared_noise_payout_mean(self):
        model = builtin_model("example4")
        opts = SimOptions(dt=1e-3, horizon=15.0, paths=2000, seed=5, mode="explicit")
        est = estimate_payoff(model, SquaredNoisePayout(), [1.0], 0, opts)
        assert abs(est.mean - 2.0) <= 3.0 * est.stderr + 0.5 * math.sqrt(opts.dt)

    def test_signed_increments_flagged(self):
        model = builtin_model("example4")
        opts = SimOptions(dt=1e-3, horizon=1.0, paths=1, seed=5, mode="explicit")
        path = simulate_controlled_path(model, SquaredNoisePayout(), [1.0], 0, opts)
        assert not path.z_nondecreasing
        assert path.flags & 2


class TestRegionPolicy:
    def test_zero_policy_never_pushes(self):
        model = builtin_model("example1")
        grid = Grid([5.0], [101])
        all_continue = RegionPolicy(PolicyField(grid, 1))
        opts = SimOptions(dt=1e-3, horizon=2.0, paths=4, seed=9)
        est = estimate_payoff(model, all_continue, [1.0], 0, opts)
        assert est.mean == 0.0
        path = simulate_controlled_path(model, all_continue, [1.0], 0, opts)
        assert np.all(path.Z == 0.0)

    def test_example1_policy_payoff(self):
        model = builtin_model("example1")
        _, policy, _ = solve(model, Grid([5.0], [501]))
        opts = SimOptions(dt=1e-3, horizon=9.0, paths=16, seed=2)
        est = estimate_payoff(model, RegionPolicy(policy), [1.0], 0, opts)
        h = 5.0 / 500
        assert abs(est.mean - 2.0) <= 3 * est.stderr + 0.5 * math.sqrt(opts.dt) + 2 * h

    def test_example3_policy_payoff_and_admissibility(self, ex3_policy):
        model, policy = ex3_policy
        opts = SimOptions(dt=2e-3, horizon=80.0, paths=500, seed=11)
        est = estimate_payoff(model, RegionPolicy(policy), [2.0], 1, opts)
        target = 2.0 / 0.95
        h = 10.0 / 800
        assert abs(est.mean - target) <= 3 * est.stderr + 0.5 * math.sqrt(opts.dt) + 2 * h
        path = simulate_controlled_path(model, RegionPolicy(policy), [2.0], 1,
                                        SimOptions(dt=2e-3, horizon=20.0, paths=1, seed=11))
        assert path.flags == 0
        assert path.z_nondecreasing
        assert path.state_nonnegative

    def test_initial_jump_outside_region(self, ex3_policy):
        model, policy = ex3_policy
        # starting in the pushing regime: everything above the region boundary
        # is paid out immediately
        opts = SimOptions(dt=1e-3, horizon=0.01, paths=1, seed=3)
        path = simulate_controlled_path(model, RegionPolicy(policy), [2.0], 0, opts)
        h = 10.0 / 800
        assert path.initial_jump[0] == pytest.approx(2.0, abs=h)
        assert path.payoff >= path.initial_jump[0]


class TestDeterminism:
    def test_same_seed_same_estimate(self):
        model = builtin_model("example4")
        opts = SimOptions(dt=1e-3, horizon=2.0, paths=64, seed=77, mode="explicit")
        a = estimate_payoff(model, SquaredNoisePayout(), [1.0], 0, opts)
        b = estimate_payoff(model, SquaredNoisePayout(), [1.0], 0, opts)
        assert a.mean == b.mean and a.stderr == b.stderr

    def test_batch_size_invariance(self, monkeypatch):
        model = builtin_model("example4")
        opts = SimOptions(dt=1e-3, horizon=1.0, paths=40, seed=13, mode="explicit")
        full = estimate_payoff(model, SquaredNoisePayout(), [1.0], 0, opts)
        import regimepush.simulate as sim
        monkeypatch.setattr(sim, "BATCH_MEMORY_BYTES", 200_000)  # force tiny batches
        split = estimate_payoff(model, SquaredNoisePayout(), [1.0], 0, opts)
        assert full.mean == split.mean

    def test_single_path_matches_batch_entry(self, ex3_policy):
        model, policy = ex3_policy
        opts = SimOptions(dt=2e-3, horizon=5.0, paths=7, seed=21)
        payoffs, *_ = _run_batches(model, RegionPolicy(policy), np.array([2.0]), 1,
                                   opts, 7, 21)
        path = simulate_controlled_path(model, RegionPolicy(policy), [2.0], 1, opts,
                                        seed_index=4)
        assert path.payoff == payoffs[4]

    def test_backend_parity_bitwise(self, ex3_policy):
        engines = dict(backend.available_engines())
        if "compiled" not in engines:
            pytest.skip("compiled kernel unavailable")
        model, policy = ex3_policy
        opts = SimOptions(dt=2e-3, horizon=10.0, paths=64, seed=31)
        outs = {}
        for name, eng in engines.items():
            payoffs, xf, zt, jumps, flags, *_ = _run_batches(
                model, RegionPolicy(policy), np.array([2.0]), 1, opts, 64, 31,
                engine=eng)
            outs[name] = (payoffs, xf, zt, jumps, flags)
        for a, b in zip(outs["pure"], outs["compiled"]):
            assert np.array_equal(a, b)


class TestOptionsAndHorizon:
    def test_paths_must_be_positive(self):
        with pytest.raises(SimulationError):
            SimOptions(paths=0)

    def test_default_horizon_from_growth_envelope(self):
        model = builtin_model("example1")
        opts = SimOptions(dt=1e-3, paths=1, seed=0, mode="explicit")
        est = estimate_payoff(model, unit_rate_payout(), [1.0], 0, opts)
        assert est.horizon == pytest.approx(math.log(1000.0))
        assert est.tail_bound == pytest.approx(math.exp(-est.horizon) * 2.0)

    def test_horizon_required_without_envelope(self):
        model = builtin_model("example3")  # unbounded coefficient sums
        with pytest.raises(SimulationError) as ei:
            estimate_payoff(model, unit_rate_payout(), [1.0], 0,
                            SimOptions(dt=1e-3, paths=1, seed=0, mode="explicit"))
        assert ei.value.code == "HORIZON_REQUIRED"

    def test_tail_bound_unknown_with_explicit_horizon(self, ex3_policy):
        model, policy = ex3_policy
        est = estimate_payoff(model, RegionPolicy(policy), [1.0], 1,
                              SimOptions(dt=1e-2, horizon=5.0, paths=2, seed=0))
        assert est.tail_bound is None


class TestDpp:
    def test_time_zero_reduces_to_value(self, ex3_policy):
        model, policy = ex3_policy
        fld, _, _ = solve(model, Grid([10.0], [801]))
        rep = dpp_sanity(model, fld, RegionPolicy(policy), [2.0], 1, 0.0,
                         SimOptions(dt=1e-3, paths=10, seed=0))
        assert rep.estimate == rep.value_at_start
        assert rep.upper_ok and rep.lower_ok

    def test_example3_identity_at_unit_time(self, ex3_policy):
        model, policy = ex3_policy
        fld, _, _ = solve(model, Grid([10.0], [801]))
        rep = dpp_sanity(model, fld, RegionPolicy(policy), [2.0], 1, 1.0,
                         SimOptions(dt=2e-3, paths=600, seed=4))
        assert rep.upper_ok and rep.lower_ok

    def test_suboptimal_policy_fails_lower_check(self):
        # never pushing wastes the payout stream: the programming identity
        # upper bound holds but the lower (optimality) check fails
        model = builtin_model("example1")
        grid = Grid([5.0], [501])
        fld, _, _ = solve(model, grid)
        lazy = RegionPolicy(PolicyField(grid, 1))
        rep = dpp_sanity(model, fld, lazy, [1.0], 0, 1.0,
                         SimOptions(dt=1e-3, paths=50, seed=6))
        assert rep.upper_ok
        assert not rep.lower_ok
