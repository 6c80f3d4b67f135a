import math

import numpy as np
import pytest

from regimepush.model import (
    CoefficientField,
    ModelSpec,
    ValidationError,
    builtin_model,
    check_comparison_conditions,
    check_example3_params,
    default_sample_lattice,
    load_model_toml,
    lyapunov_check,
    validate_generator,
    validate_reward,
)


class TestGenerator:
    def test_valid_strict(self):
        assert validate_generator([[-1, 1], [2, -2]], strict=True).ok

    def test_row_sum_violation(self):
        res = validate_generator([[-1, 0.5], [2, -2]], strict=True)
        assert not res.ok
        assert res.code == "ROW_SUM_NONZERO"
        assert res.where == (0,)

    def test_zero_diagonal_strict_vs_lenient(self):
        Q = [[0.0, 0.0], [0.0, 0.0]]
        res = validate_generator(Q, strict=True)
        assert res.code == "ZERO_DIAGONAL_IN_STRICT_MODE"
        assert validate_generator(Q, strict=False).ok

    def test_negative_off_diagonal(self):
        res = validate_generator([[1, -1], [0, 0]], strict=False)
        assert res.code == "NEGATIVE_OFF_DIAGONAL"
        assert res.where == (0, 1)

    def test_permutation_equivariance_of_violation_indices(self):
        Q = np.array([[-1.0, 0.5, 0.5], [1.0, -1.5, 0.5], [0.3, 0.4, -0.7]])
        Q[1, 2] = 0.4  # break row 1
        perm = [2, 0, 1]
        res = validate_generator(Q, strict=True)
        res_p = validate_generator(Q[np.ix_(perm, perm)], strict=True)
        assert not res.ok and not res_p.ok
        assert perm[res_p.where[0]] == res.where[0]

    def test_strict_accept_implies_lenient_accept(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            m = rng.integers(1, 5)
            off = rng.random((m, m))
            np.fill_diagonal(off, 0.0)
            Q = off - np.diag(off.sum(axis=1))
            if validate_generator(Q, strict=True).ok:
                assert validate_generator(Q, strict=False).ok


class TestReward:
    def test_constant_accepts(self):
        model = builtin_model("example1")
        assert validate_reward(model, default_sample_lattice(1, [3.0])).ok

    def test_increasing_reward_refuted_with_witness(self):
        f = CoefficientField.affine(A=[[[1.0]]], c=[[1.0]])  # 1 + x
        model = ModelSpec(1, 1, 1.0, CoefficientField.constant([[0.0]]),
                          CoefficientField.constant([[[0.0]]]), f, np.zeros((1, 1)))
        res = validate_reward(model, default_sample_lattice(1, [2.0]))
        assert res.code == "NOT_NONINCREASING"
        assert res.where  # witness pair recorded

    def test_exponential_decay_table_accepts(self):
        xs = np.linspace(0.0, 3.0, 40)
        vals = np.exp(-xs)[None, :, None]  # (m=1, grid, n=1)
        f = CoefficientField.table([xs], vals)
        model = ModelSpec(1, 1, 1.0, CoefficientField.constant([[0.0]]),
                          CoefficientField.constant([[[0.0]]]), f, np.zeros((1, 1)))
        assert validate_reward(model, default_sample_lattice(1, [3.0])).ok

    def test_nonpositive_at_origin(self):
        f = CoefficientField.constant([[0.0]])
        model = ModelSpec(1, 1, 1.0, CoefficientField.constant([[0.0]]),
                          CoefficientField.constant([[[0.0]]]), f, np.zeros((1, 1)))
        res = validate_reward(model, default_sample_lattice(1))
        assert res.code == "NONPOSITIVE_AT_ORIGIN"


class TestCoefficients:
    def test_evaluation_is_pure(self):
        model = builtin_model("example3")
        x = np.array([1.37])
        a = model.b(x, 1)
        for _ in range(5):
            assert np.array_equal(model.b(x, 1), a)

    def test_geometric_matches_formula(self):
        fld = CoefficientField.geometric([[0.5], [2.0]])
        assert fld(np.array([3.0]), 1)[0] == 6.0

    def test_clamping_below_zero(self):
        fld = CoefficientField.sqrt_power([[2.0]], rank=2)
        out = fld(np.array([-1e-9]), 0)
        assert out[0, 0] == 0.0

    def test_table_interpolation_midpoint(self):
        xs = np.array([0.0, 1.0, 2.0])
        vals = np.array([[[0.0], [10.0], [0.0]]])  # (1, 3, 1)
        fld = CoefficientField.table([xs], vals)
        assert fld(np.array([0.5]), 0)[0] == pytest.approx(5.0)
        assert fld(np.array([5.0]), 0)[0] == 0.0  # clamped

    def test_sum_bounds_by_family(self):
        assert builtin_model("example1").new_condition_bound() == 1.0
        assert builtin_model("example2").new_condition_bound() == pytest.approx(math.sqrt(2))
        assert builtin_model("example3").new_condition_bound() is None
        assert builtin_model("example4").new_condition_bound() is None


class TestComparisonConditions:
    def test_zero_coefficients_all_ok(self):
        model = ModelSpec(1, 1, 1.0, CoefficientField.constant([[0.0]]),
                          CoefficientField.constant([[[0.0]]]),
                          CoefficientField.constant([[1.0]]), np.zeros((1, 1)))
        rep = check_comparison_conditions(model, 0.5)
        assert rep.all_ok

    def test_geometric_diffusion_violates_sum_bound(self):
        # |sigma x| grows without bound; at the sampled maximum it exceeds kappa0
        model = builtin_model("example3")
        samples = default_sample_lattice(1, [50.0])
        rep = check_comparison_conditions(model, 2.0, samples=samples)
        assert not rep.diffusion_sum_ok
        assert rep.worst["diffusion_sum"][0] > 2.0

    def test_sqrt_diffusion_violates_beyond_quarter_kappa_sq(self):
        model = builtin_model("example4")
        kappa0 = 2.0
        # 2 sqrt(x) > kappa0 exactly for x > kappa0^2 / 4
        samples = np.linspace(0.0, kappa0**2 / 4 + 0.5, 200)[:, None]
        rep = check_comparison_conditions(model, kappa0, samples=samples)
        assert not rep.diffusion_sum_ok
        x_worst = rep.worst["diffusion_sum"][1][0]
        assert x_worst > kappa0**2 / 4

    def test_kappa0_must_be_positive(self):
        with pytest.raises(ValidationError):
            check_comparison_conditions(builtin_model("example1"), 0.0)


class TestExample3Params:
    def test_reference_parameters_accepted(self):
        # bound = (0.1*1 + 0.1*1.1)/1.1 = 0.19090909... >= 0.15
        assert check_example3_params(0.0, 0.15, 0.1, 1.0, 1.0) is True

    def test_mu1_not_below_r(self):
        assert check_example3_params(0.2, 0.3, 0.1, 1.0, 1.0) is False

    def test_mu2_above_upper_bound(self):
        assert check_example3_params(0.0, 0.25, 0.1, 1.0, 1.0) is False

    def test_nonpositive_parameter_raises(self):
        with pytest.raises(ValidationError):
            check_example3_params(0.0, 0.15, -0.1, 1.0, 1.0)


class TestLyapunov:
    def test_zero_function_passes(self):
        model = builtin_model("example3")
        rep = lyapunov_check(lambda x, a: 0.0, model,
                             default_sample_lattice(1, [2.0])[1:])
        assert rep.passes and rep.max_generator_value == 0.0

    def test_regime_constants_killed_by_generator(self):
        model = builtin_model("example3")
        rep = lyapunov_check(lambda x, a: 3.5, model,
                             default_sample_lattice(1, [2.0])[1:])
        assert rep.passes
        assert abs(rep.max_generator_value) < 1e-9

    def test_barrier_sign_matches_direct_evaluation(self):
        # drift-only model b=1: L psi = psi'; psi = -log x - log(K - x)
        model = builtin_model("example1")
        K = 4.0
        samples = np.linspace(0.5, 3.5, 7)[:, None]
        rep = lyapunov_check(lambda x, a: -math.log(x[0]) - math.log(K - x[0]),
                             model, samples)
        expected = max(-1.0 / x + 1.0 / (K - x) for x in samples[:, 0])
        assert rep.max_generator_value == pytest.approx(expected, abs=1e-5)


class TestToml:
    def test_builtin_with_overrides(self, tmp_path):
        cfg = tmp_path / "model.toml"
        cfg.write_text('[builtin]\nname = "example3"\nmu2 = 0.2\nsigma1 = 0.1\n')
        model = load_model_toml(cfg)
        assert model.m == 2
        assert model.b.params["coefs"][1, 0] == 0.2
        assert model.sigma.params["coefs"][0, 0] == 0.1

    def test_explicit_sections(self, tmp_path):
        cfg = tmp_path / "model.toml"
        cfg.write_text(
            "[model]\nn = 1\nm = 1\nr = 1.0\n"
            '[drift]\nfamily = "constant"\nvalues = [[1.0]]\n'
            '[diffusion]\nfamily = "constant"\nvalues = [[[0.0]]]\n'
            '[reward]\nfamily = "constant"\nvalues = [[1.0]]\n'
            "[generator]\nrows = [[0.0]]\n"
        )
        model = load_model_toml(cfg)
        assert model.n == 1 and model.r == 1.0
        assert model.b(np.array([2.0]), 0)[0] == 1.0

    def test_builtin_with_generator_replacement(self, tmp_path):
        cfg = tmp_path / "model.toml"
        cfg.write_text(
            '[builtin]\nname = "example3"\n'
            "[generator]\nrows = [[-2.0, 2.0], [3.0, -3.0]]\n"
        )
        model = load_model_toml(cfg)
        assert model.Q[0, 1] == 2.0 and model.Q[1, 0] == 3.0
