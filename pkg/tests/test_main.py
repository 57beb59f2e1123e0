import json
import sys

import pytest

import main
from config import load_preset
from errors import ConstraintViolation


def run(cmd, preset, out, **overrides):
    cfg = load_preset(preset, cmd, overrides=dict(overrides, out=str(out)))
    return main.run_command(cmd, cfg, quiet=True)


def test_classify_sweeping_preset(tmp_path):
    manifest = run("classify", "fig2a", tmp_path, cells=128)
    report = (tmp_path / "fig2a_report.md").read_text(encoding="utf-8")
    assert "**Sweeping**" in report
    assert "-1/4" in report
    assert "Mass in window [0.1, 0.9]" in report
    assert str(tmp_path / "manifest.json") in manifest.files


def test_solve_fpe_writes_snapshots_and_plot(tmp_path):
    manifest = run("solve-fpe", "fig1", tmp_path, cells=64)
    for t in ("0.25", "0.5", "0.7", "1", "2.5"):
        assert (tmp_path / f"fig1_fpe_t{t}.csv").exists()
    assert (tmp_path / "fig1_vstar.csv").exists()
    assert "fig1_vstar.csv" in (tmp_path / "fig1_fpe.gp").read_text(encoding="utf-8")
    data = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert data["command"] == "solve-fpe"
    assert data["config"]["model_source"] == "preset:fig1"
    assert manifest.shed_mass["fpe"] >= 0.0


def test_reruns_are_byte_identical(tmp_path):
    run("solve-fpe", "fig3", tmp_path / "a", cells=64)
    run("solve-fpe", "fig3", tmp_path / "b", cells=64)
    csvs = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert csvs
    for name in csvs:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_stationary_writes_vstar(tmp_path):
    manifest = run("stationary", "fig3", tmp_path, cells=256)
    assert (tmp_path / "fig3_vstar.csv").exists()
    assert manifest.notes[0].startswith("kappa = ")


def test_simulate_mc_writes_mean_and_stderr(tmp_path):
    run("simulate-mc", "fig2a", tmp_path, cells=64, paths=200)
    assert (tmp_path / "fig2a_mc_t1.csv").exists()
    assert (tmp_path / "fig2a_mc_stderr_t1.csv").exists()


def test_unknown_command():
    with pytest.raises(ConstraintViolation):
        main.run_command("plot", load_preset("fig1"), quiet=True)


@pytest.mark.parametrize("argv, code", [
    (["classify", "--preset", "fig9"], 1),
    (["classify"], 1),
    (["stationary", "--preset", "fig2a", "--cells", "128"], 2),
    (["classify", "--preset", "fig2a", "--cells", "128"], 0),
])
def test_exit_codes(monkeypatch, tmp_path, argv, code):
    monkeypatch.setattr(sys, "argv", ["main.py"] + argv + ["--out", str(tmp_path), "--quiet"])
    with pytest.raises(SystemExit) as exit_info:
        main.main()
    assert exit_info.value.code == code
