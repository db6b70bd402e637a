"""Command-line entry points, exercised through main() in-process."""

import numpy as np
import pytest

from polymim.cli import CASE_IDS, main
from polymim.mesh.fileio import read_pmesh
from polymim.swe import Planet


@pytest.fixture(scope="module")
def mesh_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "hex2_earth.pmesh"
    assert main(["mesh", "gen", "--family", "hex", "--level", "2",
                 "--out", str(path)]) == 0
    return path


def test_mesh_gen_writes_readable_file(mesh_file):
    mesh = read_pmesh(mesh_file)
    assert mesh.ncells == 162
    assert abs(mesh.radius / Planet.radius - 1.0) < 1e-15


def test_ops_build_verifies_identities(tmp_path, mesh_file, capsys):
    out = tmp_path / "ops.npz"
    assert main(["ops", "build", "--mesh", str(mesh_file),
                 "--out", str(out), "--verify"]) == 0
    assert out.exists()
    text = capsys.readouterr().out
    assert "all identities hold" in text
    assert "FAIL" not in text


def test_missing_input_reports_error_code(tmp_path, capsys):
    code = main(["ops", "build", "--mesh", str(tmp_path / "nope.pmesh"),
                 "--out", str(tmp_path / "ops.npz")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_case_aliases_cover_both_namings():
    assert CASE_IDS["tc2"] == CASE_IDS["steady-zonal"]
    assert CASE_IDS["tc5"] == CASE_IDS["mountain"]
    assert CASE_IDS["galewsky"] == CASE_IDS["perturbed-jet"]


def test_run_linear_smoke(tmp_path, mesh_file):
    outdir = tmp_path / "lin"
    assert main(["run", "--case", "linear", "--mesh", str(mesh_file),
                 "--dt", "600", "--days", "0.0139",
                 "--out", str(outdir)]) == 0
    rows = (outdir / "diagnostics.csv").read_text().strip().splitlines()
    assert rows[0] == "step,time,balance_drift,energy_drift"
    last = rows[-1].split(",")
    assert float(last[2]) < 1e-9       # geostrophic balance preserved


def test_run_steady_case_with_config_and_vtk(tmp_path, mesh_file, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("output.every_steps = 1\noutput.vtk = on\n")
    outdir = tmp_path / "tc2"
    assert main(["run", "--case", "tc2", "--mesh", str(mesh_file),
                 "--dt", "1800", "--days", "0.0209", "--config", str(cfg),
                 "--out", str(outdir)]) == 0
    text = capsys.readouterr().out
    assert "errors vs steady reference" in text
    rows = (outdir / "diagnostics.csv").read_text().strip().splitlines()
    assert len(rows) == 3              # header, step 0, step 1
    mass = [float(r.split(",")[2]) for r in rows[1:]]
    assert abs(mass[1] / mass[0] - 1.0) < 1e-13
    for step in (0, 1):
        vtk = outdir / f"state_{step:06d}.vtk"
        lines = vtk.read_text().splitlines()
        assert lines[0].startswith("# vtk DataFile")
        npoints = int(next(l for l in lines if l.startswith("POINTS")).split()[1])
        assert npoints == 320


def test_run_rejects_unit_radius_mesh(tmp_path, capsys):
    unit = tmp_path / "unit.pmesh"
    assert main(["mesh", "gen", "--family", "hex", "--level", "1",
                 "--radius", "1.0", "--out", str(unit)]) == 0
    code = main(["run", "--case", "tc5", "--mesh", str(unit),
                 "--out", str(tmp_path / "x")])
    assert code == 2
    assert "planetary-radius" in capsys.readouterr().err


def test_convergence_table_command(capsys):
    assert main(["test", "laplacian", "--family", "hex",
                 "--levels", "1..2"]) == 0
    out = capsys.readouterr().out
    assert "laplacian convergence" in out
    lines = [l for l in out.splitlines() if l.strip().startswith(("42", "162"))]
    assert len(lines) == 2
    e42 = float(lines[0].split()[1])
    e162 = float(lines[1].split()[1])
    assert e162 < e42
