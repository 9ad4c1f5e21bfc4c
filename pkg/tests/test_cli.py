import os
import subprocess
import sys

import numpy as np
import pytest

from plexadapt.cli import main
from plexadapt.fields import NodalField
from plexadapt.io import read_msh, write_metric, write_msh
from plexadapt.mesh import unit_square_mesh

from conftest import jittered_square


@pytest.fixture
def mesh_file(tmp_path):
    p = tmp_path / "grid.msh"
    write_msh(jittered_square(8, seed=0), p)
    return str(p)


def _config(tmp_path, **kw):
    p = tmp_path / "run.cfg"
    p.write_text("".join(f"{k} = {v}\n" for k, v in kw.items()))
    return str(p)


def test_validate_ok(mesh_file, capsys):
    assert main(["validate", mesh_file]) == 0
    out = capsys.readouterr().out
    assert out.startswith("OK:") and "81 vertices" in out


def test_diag_reports_isotropic_complexity(mesh_file, capsys):
    assert main(["diag", mesh_file, "--iso", "0.05"]) == 0
    out = capsys.readouterr().out
    line = next(ln for ln in out.splitlines() if ln.startswith("metric complexity"))
    # int sqrt(det M) over the unit square for M = I / 0.05^2
    assert float(line.split(":")[1]) == pytest.approx(400.0, rel=1e-9)
    assert "edge length histogram" in out and "quality: min" in out


def test_adapt_then_diag(tmp_path, mesh_file, capsys):
    m = read_msh(mesh_file)
    write_metric(NodalField.constant(m, [400.0, 0.0, 400.0]), tmp_path / "iso.metric")
    out_dir = tmp_path / "out"
    assert main(["adapt", mesh_file, str(tmp_path / "iso.metric"), "--out", str(out_dir)]) == 0
    assert "adapted:" in capsys.readouterr().out
    assert main(["validate", str(out_dir / "adapted.msh")]) == 0
    assert main(["diag", str(out_dir / "adapted.msh"), str(out_dir / "adapted.metric")]) == 0
    out = capsys.readouterr().out
    frac = float(next(ln for ln in out.splitlines() if "edges with metric length" in ln).split(":")[1].rstrip("%"))
    assert frac >= 90.0


def test_run_writes_all_outputs(tmp_path, capsys):
    cfg = _config(tmp_path, n_adap=3, n_ptfx=2, target_vertices=80, t_end=0.06, mesh_n=6, dt=0.02)
    out_dir = tmp_path / "run"
    assert main(["run", "--config", cfg, "--out", str(out_dir)]) == 0
    files = os.listdir(out_dir)
    assert len([f for f in files if f.endswith(".vtk")]) == 3 * 2
    assert "diagnostics.txt" in files
    assert "adapt_calls=3" in capsys.readouterr().out


def test_solve_prints_summary(tmp_path, capsys):
    cfg = _config(tmp_path, N_st=100, n_adap=2, t_end=0.04, mesh_n=8)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "vertices 81" in out and "L2 error vs u0 n/a" in out
    assert (tmp_path / "solution.vtk").exists()


@pytest.mark.parametrize("argv", [[], ["bogus"], ["validate"], ["diag", "x.msh", "--iso", "abc"]])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_missing_metric_is_a_usage_error(mesh_file, capsys):
    assert main(["diag", mesh_file]) == 2
    assert "--iso" in capsys.readouterr().err
    assert main(["run"]) == 2


def test_module_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.msh"
    bad.write_text("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n")
    assert main(["validate", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err
    assert main(["validate", str(tmp_path / "missing.msh")]) == 1
    cfg = _config(tmp_path, N_st=10, colour="red")
    assert main(["run", "--config", cfg]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_validate_reports_broken_mesh(tmp_path, capsys):
    m = unit_square_mesh(2)
    xy = m.vertex_coords()
    centre = int(np.flatnonzero((xy[:, 0] == 0.5) & (xy[:, 1] == 0.5))[0])
    m.move_vertex(centre, (1.4, 1.4))
    write_msh(m, tmp_path / "folded.msh")
    # reading reorients the folded cells, which then overlap
    code = main(["validate", str(tmp_path / "folded.msh")])
    assert code == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "plexadapt", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("adapt", "solve", "run", "validate", "diag"):
        assert cmd in r.stdout
