import csv
import subprocess
import sys

import numpy as np
import pytest

from hessadapt.cli import EXIT_ERROR, EXIT_FLAGGED, EXIT_OK, main
from hessadapt.geometry import load_mesh
from hessadapt.study import STUDY_COLUMNS, StudyConfig, emit_outputs, initial_mesh, loglog_slope, run_study
from hessadapt.problems import get_problem

SMALL = dict(problem="quad", recovery="qls", n_targets=[100, 200, 400], fixed_point_iters=2, seed=7)


@pytest.fixture(scope="module")
def small_records():
    return run_study(StudyConfig(**SMALL))


def test_emit_outputs_structure(small_records, tmp_path):
    files = emit_outputs(small_records, str(tmp_path))
    with open(tmp_path / "study.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == STUDY_COLUMNS
    assert len(STUDY_COLUMNS) == 16
    assert len(rows) == 4 and all(len(r) == 16 for r in rows)
    for r in small_records:
        assert (tmp_path / f"mesh_n{r.n_target}.mesh").exists()
        assert load_mesh(tmp_path / f"mesh_n{r.n_target}.mesh").n_elements == r.n_actual
        assert (tmp_path / f"elements_n{r.n_target}.csv").exists()
    assert (tmp_path / "timings.csv").exists()
    assert (tmp_path / "plot_study.py").exists()
    assert len(files) == 3 + 2 * len(small_records)


def test_emit_nothing(tmp_path):
    with pytest.raises(ValueError, match="nothing to emit"):
        emit_outputs([], str(tmp_path))


def test_rerun_byte_identical(small_records, tmp_path):
    emit_outputs(small_records, str(tmp_path / "a"))
    again = run_study(StudyConfig(**SMALL, output_dir=str(tmp_path / "b")))
    assert len(again) == len(small_records)
    for name in ["study.csv"] + [f"mesh_n{n}.mesh" for n in SMALL["n_targets"]]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_records_sane(small_records):
    for r in small_records:
        assert r.error is None
        assert 0.6 * r.n_target <= r.n_actual <= 1.4 * r.n_target
        assert r.c_ali >= 1.0 and r.c_eq >= 1.0
        assert r.alpha_exact == pytest.approx(4.2598532856, rel=1e-8)
    slope = loglog_slope([r.n_actual for r in small_records], [r.h1_error for r in small_records])
    assert -0.8 < slope < -0.3


def test_loglog_slope_exact():
    n = np.array([10.0, 100.0, 1000.0])
    assert loglog_slope(n, 3.0 * n**-0.5) == pytest.approx(-0.5)


def test_initial_mesh_seeded():
    p = get_problem("tanh")
    a, b = initial_mesh(p, 1000, 1), initial_mesh(p, 1000, 1)
    assert np.array_equal(a.vertices, b.vertices)
    assert not np.array_equal(a.vertices, initial_mesh(p, 1000, 2).vertices)
    assert a.n_elements >= 64 and np.all(a.areas > 0)


@pytest.mark.parametrize(
    "kw",
    [
        dict(problem="heat", recovery="qls"),
        dict(problem="quad", recovery="spr"),
        dict(problem="quad", recovery="qls", metric_kind="w1"),
        dict(problem="quad", recovery="qls", n_targets=[]),
        dict(problem="quad", recovery="qls", n_targets=[400, 200]),
        dict(problem="quad", recovery="qls", fixed_point_iters=0),
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        StudyConfig(**kw)


def test_cli_run(tmp_path, capsys):
    code = main(["run", "--problem", "quad", "--recovery", "WF", "--n", "100,200", "--iters", "2", "--out", str(tmp_path)])
    assert code in (EXIT_OK, EXIT_FLAGGED)
    out = capsys.readouterr().out
    assert "16-column study.csv" in out
    assert (tmp_path / "study.csv").exists()


def test_cli_check(capsys):
    assert main(["check", "--samples", "500", "--seed", "3"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 9 and all(ln.startswith("[PASS]") for ln in lines)


def test_cli_errors(tmp_path, capsys):
    with pytest.raises(SystemExit):
        main(["run", "--problem", "nosuch", "--recovery", "qls", "--out", str(tmp_path)])
    assert main(["run", "--problem", "quad", "--recovery", "qls", "--n", "300,100", "--out", str(tmp_path)]) == EXIT_ERROR


def test_console_script_entry(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "hessadapt.cli", "check", "--samples", "200"], capture_output=True, text=True
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.count("[PASS]") == 9
