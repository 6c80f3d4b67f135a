"""Backend agreement: the compiled kernel and the numpy fallback must produce
bitwise-identical outputs from identical pre-generated streams."""

import numpy as np
import pytest

from regimepush import _engine_py, backend
from regimepush.grid import Grid
from regimepush.model import CoefficientField, ModelSpec, builtin_model
from regimepush.simulate import RegionPolicy, SimOptions, _pack_model, _run_batches
from regimepush.solver import solve

compiled = pytest.importorskip("regimepush._engine")


def _outputs(model, source, x0, alpha0, opts, engine):
    return _run_batches(model, source, np.asarray(x0, dtype=float), alpha0,
                        opts, opts.paths, opts.seed, engine=engine)[:5]


def assert_bitwise(a, b):
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


class TestParity:
    def test_policy_mode_regime_switching(self):
        model = builtin_model("example3")
        _, policy, _ = solve(model, Grid([10.0], [401]))
        opts = SimOptions(dt=2e-3, horizon=12.0, paths=128, seed=17)
        a = _outputs(model, RegionPolicy(policy), [2.0], 1, opts, _engine_py)
        b = _outputs(model, RegionPolicy(policy), [2.0], 1, opts, compiled)
        assert_bitwise(a, b)

    def test_policy_mode_degenerate_noise(self):
        model = builtin_model("example4")
        _, policy, _ = solve(model, Grid([4.0], [401]))
        opts = SimOptions(dt=1e-3, horizon=4.0, paths=128, seed=23)
        a = _outputs(model, RegionPolicy(policy), [1.0], 0, opts, _engine_py)
        b = _outputs(model, RegionPolicy(policy), [1.0], 0, opts, compiled)
        assert_bitwise(a, b)

    def test_explicit_mode_with_signed_increments(self):
        from regimepush.benchmarks import SquaredNoisePayout

        model = builtin_model("example4")
        opts = SimOptions(dt=1e-3, horizon=3.0, paths=128, seed=29,
                          mode="explicit")
        a = _outputs(model, SquaredNoisePayout(), [1.0], 0, opts, _engine_py)
        b = _outputs(model, SquaredNoisePayout(), [1.0], 0, opts, compiled)
        assert_bitwise(a, b)
        assert np.all(a[4] & 2)  # signed increments flagged by both

    def test_two_dimensional_policy_projection(self):
        model = ModelSpec(
            2, 2, 0.1,
            CoefficientField.geometric([[0.0, 0.0], [0.15, 0.15]]),
            CoefficientField.geometric([[0.2, 0.2], [0.2, 0.2]], rank=2),
            CoefficientField.constant([[1.0, 1.0], [1.0, 1.0]]),
            np.array([[-1.0, 1.0], [1.0, -1.0]]),
        )
        _, policy, _ = solve(model, Grid([10.0, 10.0], [21, 21]))
        opts = SimOptions(dt=2e-3, horizon=6.0, paths=48, seed=37)
        a = _outputs(model, RegionPolicy(policy), [2.0, 3.0], 0, opts, _engine_py)
        b = _outputs(model, RegionPolicy(policy), [2.0, 3.0], 0, opts, compiled)
        assert_bitwise(a, b)

    def test_affine_drift_family(self):
        model = ModelSpec(
            1, 1, 1.0,
            CoefficientField.affine(A=[[[-0.5]]], c=[[1.0]]),
            CoefficientField.constant([[[0.3]]]),
            CoefficientField.constant([[1.0]]),
            np.zeros((1, 1)),
        )
        _, policy, _ = solve(model, Grid([4.0], [201]))
        opts = SimOptions(dt=1e-3, horizon=5.0, paths=64, seed=41)
        a = _outputs(model, RegionPolicy(policy), [1.0], 0, opts, _engine_py)
        b = _outputs(model, RegionPolicy(policy), [1.0], 0, opts, compiled)
        assert_bitwise(a, b)


class TestSelection:
    def test_env_forced_pure(self, monkeypatch):
        monkeypatch.setenv("REGIMEPUSH_BACKEND", "pure")
        monkeypatch.setattr(backend, "_engine", None)
        assert backend.get_engine().BACKEND_NAME == "pure"
        monkeypatch.setattr(backend, "_engine", None)

    def test_auto_prefers_compiled(self, monkeypatch):
        monkeypatch.delenv("REGIMEPUSH_BACKEND", raising=False)
        monkeypatch.setattr(backend, "_engine", None)
        assert backend.get_engine().BACKEND_NAME == "compiled"
        monkeypatch.setattr(backend, "_engine", None)

    def test_pack_rejects_table_fields(self):
        xs = np.linspace(0, 2, 5)
        f = CoefficientField.table([xs], np.ones((1, 5, 1)))
        model = ModelSpec(1, 1, 1.0, f,
                          CoefficientField.constant([[[0.0]]]),
                          CoefficientField.constant([[1.0]]), np.zeros((1, 1)))
        from regimepush.simulate import SimulationError

        with pytest.raises(SimulationError):
            _pack_model(model)


def test_kernel_bench_smoke():
    from regimepush.kernel_bench import run

    assert run(paths=48, dt=5e-3) is True
