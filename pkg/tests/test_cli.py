import json
import os

import numpy as np
import pytest

from regimepush import io
from regimepush.cli import main
from regimepush.grid import Grid, ValueField
from regimepush.model import builtin_model


def run(args):
    return main([str(a) for a in args])


class TestSolveCommand:
    def test_example3_golden_run(self, tmp_path, capsys):
        rc = run(["solve", "--builtin", "example3", "--grid", "801",
                  "--xmax", "10", "--out", tmp_path])
        assert rc == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["converged"] is True
        assert report["residual"] <= 1e-8
        assert report["spec_version"] == 1
        for name in ("value.csv", "policy.csv", "boundary.csv"):
            assert (tmp_path / name).exists()

    def test_value_csv_roundtrip_exact(self, tmp_path):
        run(["solve", "--builtin", "example1", "--out", tmp_path])
        from regimepush.solver import solve

        fld, _, _ = solve(builtin_model("example1"), Grid([5.0], [501]))
        _, loaded = io.read_value_csv(tmp_path / "value.csv")
        assert np.array_equal(loaded.values, fld.values)

    def test_insufficient_iterations_exit_two(self, tmp_path):
        rc = run(["solve", "--builtin", "example3", "--max-iters", "1",
                  "--out", tmp_path])
        assert rc == 2
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["converged"] is False

    def test_missing_model_file_exit_one(self, tmp_path, capsys):
        rc = run(["solve", "--model", "/no/such/model.toml", "--out", tmp_path])
        assert rc == 1
        assert "/no/such/model.toml" in capsys.readouterr().err

    def test_toml_model_with_explicit_grid(self, tmp_path):
        cfg = tmp_path / "m.toml"
        cfg.write_text('[builtin]\nname = "example1"\n')
        rc = run(["solve", "--model", cfg, "--grid", "101", "--xmax", "3",
                  "--out", tmp_path])
        assert rc == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["unknowns"] == 101

    def test_model_file_without_grid_exit_one(self, tmp_path):
        cfg = tmp_path / "m.toml"
        cfg.write_text('[builtin]\nname = "example1"\n')
        rc = run(["solve", "--model", cfg, "--out", tmp_path])
        assert rc == 1


class TestSimulateCommand:
    def test_example1_explicit_estimate(self, tmp_path):
        rc = run(["simulate", "--builtin", "example1", "--x0", "1",
                  "--paths", "2000", "--seed", "42", "--out", tmp_path])
        assert rc == 0
        est = json.loads((tmp_path / "estimate.json").read_text())
        assert abs(est["mean"] - 2.0) <= 3 * est["stderr"] + 5e-3
        assert est["mode"] == "explicit"

    def test_seed_reproducibility_byte_identical(self, tmp_path):
        args = ["simulate", "--builtin", "example1", "--x0", "1",
                "--paths", "500", "--seed", "42", "--out", tmp_path]
        run(args)
        first = (tmp_path / "estimate.json").read_bytes()
        run(args)
        assert (tmp_path / "estimate.json").read_bytes() == first

    def test_zero_paths_exit_one(self, tmp_path):
        rc = run(["simulate", "--builtin", "example1", "--x0", "1",
                  "--paths", "0", "--out", tmp_path])
        assert rc == 1

    def test_region_mode_requires_policy_files(self, tmp_path, capsys):
        rc = run(["simulate", "--builtin", "example3", "--x0", "1",
                  "--mode", "region", "--horizon", "5", "--out", tmp_path])
        assert rc == 1
        assert "policy.csv" in capsys.readouterr().err

    def test_region_mode_after_solve(self, tmp_path):
        run(["solve", "--builtin", "example3", "--grid", "401", "--xmax", "10",
             "--out", tmp_path])
        rc = run(["simulate", "--builtin", "example3", "--x0", "2",
                  "--alpha0", "1", "--paths", "200", "--dt", "2e-3",
                  "--horizon", "50", "--seed", "3", "--dump-paths", "2",
                  "--out", tmp_path])
        assert rc == 0
        est = json.loads((tmp_path / "estimate.json").read_text())
        assert abs(est["mean"] - 2.0 / 0.95) <= 3 * est["stderr"] + 0.1
        dump = (tmp_path / "path_0000.csv").read_text().splitlines()
        assert dump[0] == "t,alpha,x1,z1"
        z = np.array([float(r.split(",")[3]) for r in dump[1:]])
        assert np.all(np.diff(z) >= 0)


class TestVerifyCommand:
    def test_solved_field_all_checks_pass(self, tmp_path):
        run(["solve", "--builtin", "example3", "--grid", "401", "--xmax", "10",
             "--out", tmp_path])
        rc = run(["verify", "--builtin", "example3", "--x0", "2", "--alpha0", "1",
                  "--dt", "2e-3", "--horizon", "50", "--paths", "200",
                  "--seed", "1", "--out", tmp_path])
        assert rc == 0
        rep = json.loads((tmp_path / "verify.json").read_text())
        assert rep["all_passed"] is True
        assert set(rep["checks"]) >= {"residual", "monotonicity",
                                      "gradient_constraints", "pde_inequality",
                                      "affine_bound", "dpp_sanity"}

    def test_candidate_refutation_exits_nonzero(self, tmp_path):
        rc = run(["verify", "--builtin", "example2", "--candidate", "affine_shift",
                  "--candidate-params", "c=1", "--out", tmp_path])
        assert rc == 2
        rep = json.loads((tmp_path / "verify.json").read_text())
        assert rep["checks"]["boundary_subsolution"]["passed"] is False
        assert rep["checks"]["boundary_subsolution"]["witness"] is not None

    def test_zero_field_fails_monotonicity(self, tmp_path):
        grid = Grid([5.0], [101])
        io.write_value_csv(tmp_path / "value.csv", ValueField(grid, 1))
        rc = run(["verify", "--builtin", "example1", "--paths", "0",
                  "--out", tmp_path])
        assert rc == 2
        rep = json.loads((tmp_path / "verify.json").read_text())
        assert rep["checks"]["gradient_constraints"]["passed"] is False

    def test_spurious_candidate_passes_interior_and_boundary(self, tmp_path):
        rc = run(["verify", "--builtin", "example4", "--candidate", "spurious",
                  "--out", tmp_path])
        assert rc == 0


class TestBenchmarkCommand:
    def test_json_output_no_mc(self, tmp_path, capsys):
        rc = run(["benchmark", "--no-mc", "--json", "--out", tmp_path])
        out = capsys.readouterr().out
        payload = json.loads(out)
        assert rc == 0
        assert payload["all_ok"] is True
        names = [row["case"] for row in payload["cases"]]
        assert names == ["example1", "example2", "example3", "example4"]
        ex2 = payload["cases"][1]
        assert ex2["oracle"] == "NO_ORACLE"
        assert all(r["verdict"] == "FAIL" for r in ex2["candidate_refutations"])
        ex4 = payload["cases"][3]
        assert ex4["branch"] == "affine"
        assert (tmp_path / "benchmark.json").exists()

    def test_markdown_table(self, capsys):
        rc = run(["benchmark", "--no-mc"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "| case | grid |" in out
        assert "example3" in out


class TestDeterminismAcrossRuns:
    def test_solve_outputs_byte_identical(self, tmp_path):
        args = ["solve", "--builtin", "example3", "--grid", "201", "--xmax",
                "10", "--out", tmp_path]
        run(args)
        snap = {n: (tmp_path / n).read_bytes()
                for n in ("value.csv", "policy.csv", "boundary.csv", "report.json")}
        run(args)
        for n, blob in snap.items():
            assert (tmp_path / n).read_bytes() == blob

    def test_estimate_byte_identical_across_backends(self, tmp_path, monkeypatch):
        pytest.importorskip("regimepush._engine")
        args = ["simulate", "--builtin", "example4", "--x0", "1", "--paths",
                "100", "--dt", "1e-2", "--horizon", "3", "--seed", "9",
                "--out", tmp_path]
        import regimepush.backend as bk
        from regimepush import _engine, _engine_py

        monkeypatch.setattr(bk, "_engine", _engine)
        run(args)
        compiled = (tmp_path / "estimate.json").read_bytes()
        monkeypatch.setattr(bk, "_engine", _engine_py)
        run(args)
        pure = (tmp_path / "estimate.json").read_bytes()
        assert compiled.replace(b'"compiled"', b'"pure"') == pure
