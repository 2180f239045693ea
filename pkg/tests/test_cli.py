import json

import pytest

from centroidal_mpc.cli import main

QUICK = """\
format_version = 1

[physical]
mass_kg = 1.0
com_height_nominal_m = 0.6

[mpc]
horizon_knots = 6
period_s = 0.1

[simulation]
duration_s = 0.3
substeps = 2

[contact left]
position_m = 0.0 0.08 0.0
surface_m = 0.20 0.10
active_s = 0.0 0.3

[contact right]
position_m = 0.0 -0.08 0.0
surface_m = 0.20 0.10
active_s = 0.0 0.3
"""


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "quick.txt"
    path.write_text(QUICK)
    return path


class TestRun:
    def test_run_exports_and_exits_zero(self, scenario_file, tmp_path, capsys):
        out_dir = tmp_path / "out"
        code = main(["run", str(scenario_file), "--out", str(out_dir)])
        assert code == 0
        assert (out_dir / "states.csv").exists()
        assert (out_dir / "run_manifest.json").exists()
        payload = json.loads((out_dir / "run_manifest.json").read_text())
        assert payload["steps"] == 3

    def test_run_with_override(self, scenario_file, tmp_path):
        out_dir = tmp_path / "out2"
        code = main([
            "run", str(scenario_file), "--out", str(out_dir),
            "--override", "simulation.substeps=5",
        ])
        assert code == 0
        payload = json.loads((out_dir / "run_manifest.json").read_text())
        assert payload["steps"] == 3

    def test_validation_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("format_version = 1\n[physical]\nmass_kg = -1\n")
        assert main(["run", str(bad)]) == 2
        err = capsys.readouterr().err
        assert "error:" in err

    def test_missing_file_exit_code(self):
        assert main(["run", "/nonexistent/path.txt"]) == 2

    def test_degraded_completion_exit_code(self, scenario_file, tmp_path, capsys):
        # one solver iteration cannot converge; the run completes degraded
        code = main([
            "run", str(scenario_file), "--out", str(tmp_path / "deg"),
            "--override", "mpc.max_iterations=1",
            "--override", "mpc.kkt_tolerance=1e-14",
        ])
        assert code == 3
        assert "degraded" in capsys.readouterr().err

    def test_divergence_exit_code(self, tmp_path, capsys):
        # an unresisted kilonewton push on a 1 kg body leaves the sane region
        text = QUICK.replace("duration_s = 0.3", "duration_s = 4.0").replace(
            "active_s = 0.0 0.3", "active_s = 0.0 4.0"
        ) + "\n[disturbance]\nt_start_s = 0.0\nduration_s = 4.0\nforce_n = 1000 0 0\nestimated_force_n = 0 0 0\n"
        bad = tmp_path / "diverge.txt"
        bad.write_text(text)
        code = main(["run", str(bad), "--out", str(tmp_path / "div")])
        assert code == 1
        assert "diverged" in capsys.readouterr().err


class TestMetricsCommand:
    def test_prints_manifest_metrics(self, scenario_file, tmp_path, capsys):
        out_dir = tmp_path / "out"
        main(["run", str(scenario_file), "--out", str(out_dir)])
        capsys.readouterr()
        assert main(["metrics", str(out_dir)]) == 0
        out = capsys.readouterr().out
        assert "convergence_rate" in out

    def test_missing_manifest(self, tmp_path):
        assert main(["metrics", str(tmp_path)]) == 2


class TestCheckDerivatives:
    def test_reports_small_error(self, scenario_file, capsys):
        code = main(["check-derivatives", str(scenario_file), "--points", "2"])
        assert code == 0
        out = capsys.readouterr().out
        assert "max rel error" in out
