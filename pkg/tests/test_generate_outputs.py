import json
from fractions import Fraction

import numpy as np
import pytest
from scipy import sparse

from asymptotics import SWEEPING, LargeTimeReport, SweepingReport
from errors import NumericalError
from generate_outputs import OutputWriter, RunManifest


@pytest.fixture
def writer(tmp_path):
    return OutputWriter(tmp_path, quiet=True)


def test_profile_csv_layout(writer):
    x = np.array([0.125, 0.375, 0.625, 0.875])
    values = np.vstack([np.full(4, 0.1), np.full(4, 0.3)])
    path = writer.write_profile_csv("profile.csv", x, values)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "x,state0,state1,total"
    assert len(lines) == 5
    assert lines[1] == "0.125,0.10000000000000001,0.29999999999999999,0.40000000000000002"


def test_profile_csv_rejects_inconsistent_total(writer):
    x = np.linspace(0.0, 1.0, 5)
    values = np.ones((2, 5))
    with pytest.raises(NumericalError):
        writer.write_profile_csv("bad.csv", x, values, total=np.ones(5))
    # standard-error tables are not checked
    writer.write_profile_csv("stderr.csv", x, values, total=np.ones(5), check_mass=False)


def test_surface_csv_is_row_major(writer):
    values = np.arange(8, dtype=float).reshape(2, 2, 2)
    path = writer.write_surface_csv("surface.csv", np.array([0.0, 1.0]), np.array([0.5, 1.5]), values)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "x,y,state0,state1,total"
    assert lines[1:] == ["0,0.5,0,4,4", "0,1.5,1,5,6", "1,0.5,2,6,8", "1,1.5,3,7,10"]


def test_generator_coordinate_format(writer):
    matrix = sparse.csr_matrix(np.array([[-1.0, 0.0], [1.0, -2.5]]))
    lines = writer.write_generator("gen.txt", matrix).read_text(encoding="utf-8").splitlines()
    assert lines == ["2 2 3", "0 0 -1", "1 0 1", "1 1 -2.5"]


def test_compare_table(writer):
    rows = [{"t": 1.0, "l1_distance": 0.02, "mc_mean_std_err": 0.001, "fpe_shed_mass": 0.0, "mc_shed_mass": 0.0}]
    lines = writer.write_compare_table("compare.csv", rows).read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,l1_distance,mc_mean_std_err,fpe_shed_mass,mc_shed_mass"
    assert lines[1].startswith("1,0.02")


def test_report_lists_verdict_and_window(writer):
    report = LargeTimeReport("fig2a", -0.25, Fraction(-1, 4), SWEEPING, notes=["lambda < 0"])
    sweeping = SweepingReport((0.1, 0.9), (0.25, 1.0), (0.6, 0.4), True, True)
    text = writer.write_report("report.md", report, sweeping, extra_notes=["preset note"]).read_text("utf-8")
    assert "**Sweeping**" in text
    assert "-1/4" in text
    assert "| 1 | 0.400000 |" in text
    assert "- lambda < 0" in text and "- preset note" in text
    assert "| kappa | inf |" in text


def test_checks_table(writer):
    checks = [{"id": 1, "name": "lambda", "passed": True, "detail": "ok"},
              {"id": 2, "name": "mass", "passed": False, "detail": "drift"}]
    text = writer.write_checks("verification.md", checks).read_text(encoding="utf-8")
    assert "| 1 | lambda | PASS | ok |" in text
    assert "| 2 | mass | FAIL | drift |" in text


def test_manifest_lists_itself(writer, tmp_path):
    writer.write_profile_csv("a.csv", np.array([0.0, 1.0]), np.ones((1, 2)))
    manifest = RunManifest("solve-fpe", "1.0.0", 7, {"model.preset": "fig1"})
    path = writer.write_manifest(manifest)
    data = json.loads(path.read_text(encoding="utf-8"))
    assert data["files"] == sorted([str(tmp_path / "a.csv"), str(tmp_path / "manifest.json")])
    assert data["master_seed"] == 7
    assert data["config"] == {"model.preset": "fig1"}
