import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from lfsim.cli import main
from lfsim.config import (ExperimentKind, ParseError, ValidationError,
                          parse_config)
from lfsim.model import StateKind

MINIMAL = """
experiment = dispersion

[params]
alpha = 0.1
gamma0 = -1.0
"""


class TestParser:
    def test_minimal_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.experiment is ExperimentKind.DISPERSION
        assert cfg.n_per_axis == 64
        assert cfg.box_length == pytest.approx(20.0 * math.pi)
        assert cfg.solver.dt == 1e-3
        assert cfg.amplitude == 1e-4
        assert cfg.params.beta == 1.0 and cfg.params.gamma2 == 1.0
        assert cfg.state_kind is StateKind.DISORDERED
        assert np.allclose(cfg.direction, [1.0, 0.0])

    def test_dotted_keys_equal_sections(self):
        a = parse_config(MINIMAL + "\n[solver]\ndt = 2e-3\n")
        b = parse_config(MINIMAL + "\nsolver.dt = 2e-3\n")
        assert a.solver.dt == b.solver.dt == 2e-3

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# top\nexperiment = dispersion  # trailing\n\n"
                           "params.alpha = 0.1\nparams.gamma0 = -1 # x\n")
        assert cfg.params.gamma0 == -1.0

    def test_unknown_key_is_parse_error_with_line(self):
        bad = MINIMAL + "gamma3 = 1.0\n"
        with pytest.raises(ParseError, match="gamma3"):
            parse_config(bad)
        try:
            parse_config(bad)
        except ParseError as exc:
            assert exc.line == bad.splitlines().index("gamma3 = 1.0") + 1

    def test_negative_beta_is_validation_error(self):
        with pytest.raises(ValidationError, match="beta must be > 0"):
            parse_config(MINIMAL + "params.beta = -1\n")

    def test_missing_required(self):
        with pytest.raises(ValidationError, match="params.alpha"):
            parse_config("experiment = dispersion\nparams.gamma0 = -1\n")

    def test_duplicate_key(self):
        with pytest.raises(ParseError, match="duplicate"):
            parse_config(MINIMAL + "params.alpha = 0.2\n")

    def test_malformed_line(self):
        with pytest.raises(ParseError, match="key = value"):
            parse_config("experiment dispersion\n")

    def test_bad_number(self):
        with pytest.raises(ParseError, match="bad value"):
            parse_config(MINIMAL + "solver.dt = fast\n")

    def test_unknown_experiment(self):
        with pytest.raises(ValidationError, match="unknown experiment"):
            parse_config("experiment = warp\nparams.alpha = 0\nparams.gamma0 = 0\n")

    def test_tracked_wavevectors(self):
        cfg = parse_config(MINIMAL +
                           "perturbation.tracked_wavevectors = 0.5,0 0.5,0.5\n")
        assert cfg.tracked_wavevectors == [(0.5, 0.0), (0.5, 0.5)]

    def test_off_lattice_tracked_rejected(self):
        with pytest.raises(ValidationError, match="lattice"):
            parse_config(MINIMAL +
                         "perturbation.tracked_wavevectors = 0.51,0\n")

    def test_ordered_experiment_requires_negative_alpha(self):
        with pytest.raises(ValidationError, match="alpha"):
            parse_config("experiment = ordered_contractivity\n"
                         "params.alpha = 0.1\nparams.gamma0 = 1\n")

    def test_ordered_experiment_rejects_disordered_state(self):
        with pytest.raises(ValidationError, match="ordered"):
            parse_config("experiment = ordered_instability\n"
                         "params.alpha = -1\nparams.gamma0 = -0.5\n"
                         "state.kind = disordered\n")

    def test_direction_normalized(self):
        cfg = parse_config("experiment = ordered_instability\n"
                           "params.alpha = -1\nparams.gamma0 = -0.5\n"
                           "state.direction = 3,4\n")
        assert np.allclose(cfg.direction, [0.6, 0.8])

    def test_overrides(self):
        cfg = parse_config(MINIMAL, {"solver.dt": "5e-3", "grid.n_per_axis": "32"})
        assert cfg.solver.dt == 5e-3 and cfg.n_per_axis == 32
        with pytest.raises(ParseError, match="override"):
            parse_config(MINIMAL, {"nope": "1"})

    def test_default_t_end_per_experiment(self):
        assert parse_config(MINIMAL).solver.t_end == 5.0
        cfg = parse_config("experiment = free_run\nparams.alpha = 0.1\n"
                           "params.gamma0 = -1\n")
        assert cfg.solver.t_end == 10.0


def write_cfg(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


QUICK_DISPERSION = """
experiment = dispersion
params.alpha = 0.1
params.gamma0 = -1.0
grid.n_per_axis = 32
solver.dt = 2e-3
solver.t_end = 2.0
solver.diagnostics_interval = 0.02
"""


class TestCli:
    def test_classify_json_line(self, capsys):
        code = main(["classify", "--gamma0", "-1", "--alpha", "0.1"])
        assert code == 0
        out = json.loads(capsys.readouterr().out.strip())
        assert out["classification"] == "exponentially_unstable"
        assert out["max_growth_rate"] == pytest.approx(0.15)
        assert out["band"]["s_plus_sq"] == pytest.approx(0.8872983346207417)

    def test_classify_ordered(self, capsys):
        code = main(["classify", "--gamma0", "1", "--alpha", "-1", "--ordered"])
        assert code == 0
        out = json.loads(capsys.readouterr().out.strip())
        assert out["classification"] == "asymptotically_stable"
        assert out["note"]

    def test_classify_rejects_bad_params(self, capsys):
        assert main(["classify", "--gamma0", "1", "--alpha", "1",
                     "--beta", "-1"]) == 3

    def test_dispersion_table(self, capsys):
        code = main(["dispersion", "--gamma0", "-1", "--alpha", "0.1",
                     "--modes", "4"])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 5 and "predicted" in lines[0]

    def test_run_pass_and_outputs(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, QUICK_DISPERSION)
        out = str(tmp_path / "out")
        assert main(["run", cfg, "--out", out]) == 0
        printed = capsys.readouterr().out
        assert "RESULT dispersion: PASS" in printed
        for name in ("diagnostics.csv", "rates.csv", "report.csv"):
            assert os.path.exists(os.path.join(out, "dispersion", name))

    def test_run_check_failure_exit_code(self, tmp_path, capsys):
        # a large explicit zeroth-order term at coarse dt degrades the
        # measured rates past the linearized tolerance: exit 1
        cfg = write_cfg(tmp_path, """
experiment = dispersion
params.alpha = 4.0
params.gamma0 = -1.0
grid.n_per_axis = 32
solver.dt = 0.2
solver.t_end = 4.0
solver.diagnostics_interval = 0.2
""")
        assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_run_config_error_exit_code(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, QUICK_DISPERSION + "params.beta = -2\n")
        assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 3
        assert "beta" in capsys.readouterr().err
        assert main(["run", str(tmp_path / "missing.cfg")]) == 3

    def test_run_override(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, QUICK_DISPERSION)
        assert main(["run", cfg, "--out", str(tmp_path / "o"),
                     "--override", "solver.t_end=1.0"]) == 0

    def test_determinism_identical_csv(self, tmp_path):
        cfg = write_cfg(tmp_path, QUICK_DISPERSION)
        outs = []
        for sub in ("a", "b"):
            out = str(tmp_path / sub)
            assert main(["run", cfg, "--out", out]) == 0
            with open(os.path.join(out, "dispersion", "diagnostics.csv"),
                      "rb") as fh:
                outs.append(fh.read())
        assert outs[0] == outs[1]

    def test_lf_threads_env(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("LF_THREADS", "2")
        cfg = write_cfg(tmp_path, """
experiment = phase_diagram
params.alpha = 0.1
params.gamma0 = -1.0
phase.resolution = 9
""")
        assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 0
        path = os.path.join(str(tmp_path / "o"), "phase_diagram",
                            "phase_disordered.csv")
        assert sum(1 for _ in open(path)) == 1 + 81

    def test_small_box_warns_about_band_coverage(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, """
experiment = dispersion
params.alpha = 0.1
params.gamma0 = -1.0
grid.n_per_axis = 16
grid.box_length = 6.0
solver.dt = 2e-3
solver.t_end = 1.0
solver.diagnostics_interval = 0.02
perturbation.tracked_wavevectors = 1.0471975511965976,0
""")
        main(["run", cfg, "--out", str(tmp_path / "o")])
        assert "unstable band" in capsys.readouterr().err

    def test_entry_point_subprocess(self):
        # the installed console script path
        proc = subprocess.run(
            [sys.executable, "-m", "lfsim.cli", "classify",
             "--gamma0", "-1", "--alpha", "0.3"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["classification"] == "exponentially_stable"
