import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hho_brinkman.cli import cli_main
from hho_brinkman.harness import ERROR_COLUMNS, FRICTION_COLUMNS, StudyConfig, build_case, run_study
from hho_brinkman.mesh import hexagonal_data_dir

from conftest import FD_STEP, fd_divergence_flux

CASES = [(r, mu, nu) for r in (2.0, 3.0, 4.0) for mu, nu in ((1.0, 1.0), (1e-6, 1.0), (1.0, 0.0))]


# --------------------------------------------------------------------------
# Manufactured data


@pytest.mark.parametrize("r,mu,nu", CASES)
def test_source_matches_finite_differences(r, mu, nu, rng):
    case = build_case(r, mu, nu)
    pts = rng.uniform(0.02, 0.98, (25, 2))
    fd = -fd_divergence_flux(case, pts) + nu * case.u(pts) + case.grad_p(pts)
    f = case.f(pts)
    assert np.abs(f - fd).max() <= 1e-6 * np.abs(f).max()


@pytest.mark.parametrize("r,mu,nu", CASES)
def test_derivatives_match_finite_differences(r, mu, nu, rng):
    case = build_case(r, mu, nu)
    pts = rng.uniform(0, 1, (25, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = FD_STEP
        du = (case.u(pts + e) - case.u(pts - e)) / (2 * FD_STEP)
        assert np.abs(du - case.grad_u(pts)[:, :, j]).max() <= 1e-6 * max(1.0, np.abs(du).max())
        dg = (case.grad_u(pts + e) - case.grad_u(pts - e)) / (2 * FD_STEP)
        assert np.abs(dg - case.hess_u(pts)[..., j]).max() <= 1e-6 * max(1.0, np.abs(dg).max())
        dp = (case.p(pts + e) - case.p(pts - e)) / (2 * FD_STEP)
        assert np.abs(dp - case.grad_p(pts)[:, j]).max() <= 1e-8


def test_solenoidal_and_darcy_parts(rng):
    pts = rng.uniform(0, 1, (50, 2))
    stokes = build_case(3.0, 1.0, 0.0)  # chi = 1, u = u_S
    G = stokes.grad_u(pts)
    assert np.abs(G[:, 0, 0] + G[:, 1, 1]).max() <= 1e-13
    darcy = build_case(3.0, 0.0, 2.5)  # chi = 0, u = u_D
    assert np.abs(2.5 * darcy.u(pts) + darcy.grad_p(pts)).max() <= 1e-13


def test_centre_values():
    case = build_case(3.0, 1.0, 0.0)
    c = np.array([[0.5, 0.5]])
    assert np.abs(case.u(c)).max() <= 1e-15
    assert case.p(c)[0] == pytest.approx(1.0, abs=1e-15)


def test_blend_limits():
    assert build_case(2.0, 1e12, 1.0).chi == pytest.approx(1.0)
    assert build_case(2.0, 0.0, 1.0).chi == 0.0
    assert build_case(2.0, 0.0, 1.0).friction == np.inf
    assert build_case(2.0, 2.0, 1.0).friction == 0.5


@pytest.mark.parametrize("args", [(0.9, 1, 1), (2, 0, 0), (2, -1, 1)])
def test_case_validation(args):
    with pytest.raises(ValueError):
        build_case(*args)


# --------------------------------------------------------------------------
# Studies and files


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_study_csv_schema(tmp_path):
    cfg = StudyConfig(levels=3, first_level=0, k=1, r=2.0, out=str(tmp_path))
    report = run_study(cfg)
    rows = read_csv(tmp_path / "errors.csv")
    assert rows[0] == ERROR_COLUMNS
    assert len(rows) == 4
    assert rows[1][-1] == "" and all(row[-1] for row in rows[2:])
    assert len(report.rates()) == 2
    for lv in report.levels:
        fr = read_csv(tmp_path / f"friction_level{lv.level}.csv")
        assert fr[0] == FRICTION_COLUMNS
        assert len(fr) == 1 + 2 * 4 ** (lv.level + 1)
        assert {row[4] for row in fr[1:]} <= {"stokes", "darcy"}


def test_study_reproducible(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / str(i)
        run_study(StudyConfig(levels=2, k=1, r=3.0, mu=1e-2, out=str(out)))
        outs.append(sorted((p.name, p.read_bytes()) for p in out.iterdir()))
    assert outs[0] == outs[1]


def test_study_records_failure_and_continues():
    report = run_study(StudyConfig(levels=2, first_level=0, k=0, r=3.0, max_iter=0))
    assert not report.ok
    assert [lv.solved for lv in report.levels] == [False, False]
    assert all("no convergence" in lv.message for lv in report.levels)


@pytest.mark.parametrize("bad", [
    dict(family="spheres"), dict(levels=0), dict(k=3), dict(r=1.0), dict(mu=0.0), dict(nu=-1.0),
    dict(tol=0.0), dict(family="file"), dict(first_level=-1),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        StudyConfig(**bad).validate()


# --------------------------------------------------------------------------
# CLI


def test_cli_rejects_small_r(capsys):
    assert cli_main(["--r", "0.9"]) == 2
    assert "r must exceed 1" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["--bogus"], ["--k", "5"], ["--levels", "two"], ["--continuation", "maybe"]])
def test_cli_bad_flags(argv, capsys):
    assert cli_main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_cli_triangular_study(tmp_path, capsys):
    code = cli_main(["--family", "triangular", "--levels", "3", "--first-level", "0", "--k", "1",
                     "--r", "2", "--mu", "1", "--nu", "1", "--out", str(tmp_path)])
    assert code == 0
    rows = read_csv(tmp_path / "errors.csv")
    assert len(rows) == 4
    assert sum(1 for row in rows[1:] if row[-1]) == 2
    assert "err_monitored" in capsys.readouterr().out


def test_cli_shipped_hexagonal_files(tmp_path):
    code = cli_main(["--family", "file", "--mesh-dir", str(hexagonal_data_dir()), "--levels", "2",
                     "--first-level", "0", "--k", "1", "--r", "3", "--mu", "1", "--out", str(tmp_path)])
    assert code == 0
    rows = read_csv(tmp_path / "errors.csv")
    assert len(rows) == 3
    assert len(read_csv(tmp_path / "friction_level0.csv")) == 1 + 7


def test_cli_config_file_and_override(tmp_path):
    cfg = tmp_path / "study.json"
    cfg.write_text(json.dumps({"levels": 2, "first_level": 0, "k": 0, "r": 3.0, "mu": 0.5,
                               "continuation": "on", "out": str(tmp_path / "a")}))
    assert cli_main(["--config", str(cfg)]) == 0
    assert len(read_csv(tmp_path / "a" / "errors.csv")) == 3
    assert cli_main(["--config", str(cfg), "--levels", "1", "--out", str(tmp_path / "b")]) == 0
    assert len(read_csv(tmp_path / "b" / "errors.csv")) == 2


def test_cli_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "study.json"
    cfg.write_text(json.dumps({"levels": 2, "colour": "blue"}))
    assert cli_main(["--config", str(cfg)]) == 2
    assert "colour" in capsys.readouterr().err


def test_cli_solver_failure_exit_code(tmp_path):
    cfg = tmp_path / "study.json"
    cfg.write_text(json.dumps({"levels": 1, "first_level": 0, "k": 0, "r": 3.0, "max_iter": 0}))
    assert cli_main(["--config", str(cfg)]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hho_brinkman", "--r", "0.9"], capture_output=True, text=True)
    assert res.returncode == 2
    assert "r must exceed 1" in res.stderr
