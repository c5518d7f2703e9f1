import os

import numpy as np
import pytest

from vsl import cli, io

TINY_TWIN = """
[simulation]
engine = direct-3d
softening = 0.001
dt_initial = 0.1
t_end = 4

[species]
name = p
charge = 1.0
mass = 1.0
count = 60
seed = 5
kind = uniform-ball
radius_x = 1.0
radius_v = 0.5

[species]
name = n
charge = -1.0
mass = 1.0
count = 60
seed = 5
kind = uniform-ball
radius_x = 1.0
radius_v = 0.5
"""

TINY_MONO = """
[simulation]
engine = spherical-shell
softening = 0
dt_initial = 0.02
t_end = 64

[species]
name = ions
charge = 1.0
mass = 1.0
count = 250
seed = 12
kind = uniform-ball
radius_x = 1.0
radius_v = 0.5
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_simulate_twin_floor(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TINY_TWIN)
    out = str(tmp_path / "out")
    assert cli.main(["simulate", "--config", cfg, "--out", out, "--quiet"]) == 0
    cols = io.read_csv(os.path.join(out, "diagnostics.csv"))
    assert np.all(cols["sup_E"] < 1e-10)
    for name in ("profile.txt", "config.cfg", "overlay.csv", "checkpoint.bin"):
        assert os.path.exists(os.path.join(out, name))
    snaps = [f for f in os.listdir(out) if f.startswith("snapshot_")]
    assert len(snaps) == 3   # t = 1, 2, 4


def test_full_pipeline(tmp_path):
    cfg = write_cfg(tmp_path, TINY_MONO)
    out = str(tmp_path / "run")
    assert cli.main(["simulate", "--config", cfg, "--out", out, "--quiet"]) == 0
    assert cli.main(["diagnose", "--in", out, "--out", str(tmp_path / "diag"),
                     "--quiet"]) == 0
    # recomputed diagnostics match the simulate-time CSV
    a = io.read_csv(os.path.join(out, "diagnostics.csv"))
    b = io.read_csv(os.path.join(tmp_path, "diag", "diagnostics.csv"))
    assert np.allclose(a["sup_E"], b["sup_E"], rtol=1e-12)
    assert np.allclose(a["E_vp"], b["E_vp"], rtol=1e-12)

    assert cli.main(["fit", "--in", out, "--out", out, "--quiet",
                     "--override", "t_a=4"]) == 0
    fits = io.read_csv(os.path.join(out, "fits.csv"))
    assert "sup_E" in set(fits["quantity"])
    assert cli.main(["report", "--in", out, "--out", out, "--quiet"]) == 0
    report = open(os.path.join(out, "report.txt")).read()
    assert "exponent" in report and ("PASS" in report or "FAIL" in report)


def test_fit_on_synthetic_csv(tmp_path):
    t = np.linspace(2, 128, 30)
    lines = ["# vsl-schema v1", "t,sup_E,sup_rho"]
    for tt in t:
        lines.append(f"{tt},{tt**-2.0:.17g},{tt**-3.0:.17g}")
    (tmp_path / "diagnostics.csv").write_text("\n".join(lines) + "\n")
    assert cli.main(["fit", "--in", str(tmp_path), "--out", str(tmp_path),
                     "--quiet"]) == 0
    fits = io.read_csv(tmp_path / "fits.csv")
    sel = (fits["quantity"] == "sup_E") & (fits["model"] == "power")
    assert float(fits["p_hat"][sel][0]) == pytest.approx(2.0, abs=1e-6)


def test_usage_errors(tmp_path):
    missing = str(tmp_path / "nope.cfg")
    assert cli.main(["simulate", "--config", missing,
                     "--out", str(tmp_path / "o")]) == 1
    cfg = write_cfg(tmp_path, TINY_TWIN)
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "o"),
                     "--override", "bogus_key=1"]) == 1
    assert cli.main(["fit", "--in", str(tmp_path / "empty"),
                     "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["report", "--in", str(tmp_path),
                     "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["simulate"]) == 1   # missing required flags


def test_unknown_subcommand_usage_error():
    assert cli.main(["explode", "--out", "x"]) == 1


def test_runtime_failure_cleans_outputs(tmp_path):
    blow = """
[simulation]
engine = direct-3d
softening = 1e-6
dt_initial = 0.05
t_end = 4

[species]
name = hot
charge = 1.0
mass = 1e-6
count = 2
seed = 1
kind = uniform-ball
radius_x = 0.01
radius_v = 1e-9
"""
    cfg = write_cfg(tmp_path, blow)
    out = str(tmp_path / "boom")
    assert cli.main(["simulate", "--config", cfg, "--out", out, "--quiet"]) == 2
    leftovers = [f for f in os.listdir(out) if f != "blowup_dump.txt"]
    assert leftovers == []
    assert os.path.exists(os.path.join(out, "blowup_dump.txt"))


def test_resume_guard_and_continuation(tmp_path):
    cfg = write_cfg(tmp_path, TINY_MONO)
    out = str(tmp_path / "r")
    assert cli.main(["simulate", "--config", cfg, "--out", out, "--quiet"]) == 0
    # re-running resumes from the final checkpoint (no intervals left)
    assert cli.main(["simulate", "--config", cfg, "--out", out, "--quiet"]) == 0
    # a different config in the same directory is refused
    cfg2 = write_cfg(tmp_path, TINY_MONO.replace("t_end = 64", "t_end = 32"),
                     name="other.cfg")
    assert cli.main(["simulate", "--config", cfg2, "--out", out, "--quiet"]) == 1


def test_env_seed_override(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, TINY_MONO)
    out1 = str(tmp_path / "a")
    out2 = str(tmp_path / "b")
    assert cli.main(["simulate", "--config", cfg, "--out", out1, "--quiet"]) == 0
    monkeypatch.setenv("VSL_SEED", "4321")
    monkeypatch.setenv("VSL_THREADS", "2")
    assert cli.main(["simulate", "--config", cfg, "--out", out2, "--quiet"]) == 0
    s1 = open(os.path.join(out1, "snapshot_0000.txt")).read()
    s2 = open(os.path.join(out2, "snapshot_0000.txt")).read()
    assert s1 != s2
