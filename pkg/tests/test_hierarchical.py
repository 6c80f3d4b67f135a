import numpy as np
import pytest

from regimepush.grid import Grid
from regimepush.model import CoefficientField, ModelSpec, builtin_model
from regimepush.solver import SolveError, check_h1, hierarchical_solve, solve

C3 = 1.0 / 0.95


def product_model():
    """Two independent copies of the two-regime geometric model sharing one
    chain, additive unit reward: the value separates across coordinates."""
    return ModelSpec(
        2, 2, 0.1,
        CoefficientField.geometric([[0.0, 0.0], [0.15, 0.15]]),
        CoefficientField.geometric([[0.2, 0.2], [0.2, 0.2]], rank=2),
        CoefficientField.constant([[1.0, 1.0], [1.0, 1.0]]),
        np.array([[-1.0, 1.0], [1.0, -1.0]]),
    )


class TestH1:
    def test_geometric_coefficients_pass(self):
        check_h1(builtin_model("example3"), Grid([10.0], [101]))

    def test_nonvanishing_drift_rejected(self):
        with pytest.raises(SolveError) as ei:
            check_h1(builtin_model("example1"), Grid([5.0], [101]))
        assert ei.value.code == "H1_VIOLATED"
        assert "x_0=0" in str(ei.value)


class TestOneDimensional:
    def test_origin_pinned_to_empty_subsystem_value(self):
        faces, (fld, _, report) = hierarchical_solve(
            builtin_model("example3"), Grid([10.0], [401])
        )
        assert report.converged
        assert faces == []  # n = 1: only the empty subset below the top level
        assert fld.values[0, 0] == 0.0 and fld.values[0, 1] == 0.0

    def test_matches_unpinned_solve(self):
        model = builtin_model("example3")
        grid = Grid([10.0], [401])
        _, (fld_h, _, _) = hierarchical_solve(model, grid)
        fld, _, _ = solve(model, grid)
        assert np.max(np.abs(fld_h.values - fld.values)) <= 1e-8


class TestTwoDimensional:
    @pytest.fixture(scope="class")
    def solved(self):
        model = product_model()
        grid = Grid([10.0, 10.0], [41, 41])
        faces, full = hierarchical_solve(model, grid)
        return model, grid, faces, full

    def test_face_systems_match_standalone_solves(self, solved):
        model, grid, faces, _ = solved
        _, (standalone, _, _) = hierarchical_solve(
            builtin_model("example3"), Grid([10.0], [41])
        )
        for fs in faces:
            assert len(fs.indices) == 1
            assert np.array_equal(fs.value.values, standalone.values)

    def test_reduced_coefficients_agree_with_embedded_parent(self, solved):
        model, _, faces, _ = solved
        rng = np.random.default_rng(0)
        fs = faces[0]
        for _ in range(10):
            y = rng.random(1) * 9.0
            x_full = np.zeros(2)
            x_full[fs.indices[0]] = y[0]
            for alpha in range(2):
                assert np.array_equal(
                    fs.model.b(y, alpha), model.b(x_full, alpha)[list(fs.indices)]
                )
                assert np.array_equal(fs.model.f(y, alpha),
                                      model.f(x_full, alpha)[list(fs.indices)])

    def test_full_value_separates_across_coordinates(self, solved):
        model, grid, _, (fld, _, report) = solved
        assert report.converged
        pts = grid.coords()
        inner = np.all(pts <= 8.0, axis=1) & np.all(pts > 0, axis=1)
        for alpha, slope in ((0, 1.0), (1, C3)):
            target = slope * pts[:, 0] + slope * pts[:, 1]
            rel = np.abs(fld.values[inner, alpha] - target[inner]) / target[inner]
            assert rel.max() <= 3e-2

    def test_faces_pin_full_solution(self, solved):
        model, grid, faces, (fld, _, _) = solved
        # the x_1 = 0 edge of the full field equals the {x_2} face system
        edge = np.nonzero(grid.face_mask(0, upper=False))[0]
        face2 = next(fs for fs in faces if fs.indices == (1,))
        assert np.array_equal(fld.values[edge], face2.value.values)
