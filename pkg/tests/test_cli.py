import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from cavityspin import runner
from cavityspin.cli import main
from cavityspin.config import parse_config_dict
from cavityspin.errors import StiffnessError
from cavityspin.io import load_checkpoint, read_csv, sha256_file

MODEL = {"n_atoms": 6, "gamma": 1.0, "chi_ratio": 1.875, "omega_ratio": 1.5}


def write_cfg(tmp_path, task, name="cfg.json", **extra):
    cfg = {"model": MODEL, "task": task, **extra}
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, sub, task, out="out", args=(), **extra):
    path = write_cfg(tmp_path, task, **extra)
    out_dir = tmp_path / out
    code = main([sub, "--config", path, "--out", str(out_dir), *args])
    return code, out_dir


def table(path):
    cols, rows = read_csv(path)
    return cols, rows


def manifest(out_dir):
    return json.loads((out_dir / "manifest.json").read_text())


def check_manifest(out_dir, expected):
    m = manifest(out_dir)
    assert set(m["files"]) == set(expected)
    for name, entry in m["files"].items():
        assert entry["sha256"] == sha256_file(out_dir / name)
    assert {"python", "numpy", "scipy"} <= set(m["versions"])
    assert m["wall_time_s"] >= 0
    return m


def test_steady_state(tmp_path):
    task = {"kind": "steady-state", "omega_grid": {"min": 0.2, "max": 1.2, "points": 6}, "husimi": {"n_theta": 5, "n_phi": 8}}
    code, out = run(tmp_path, "steady-state", task)
    assert code == 0
    cols, rows = table(out / "steady_state.csv")
    assert cols == ["omega", "omega_over_omega_c", "xi2", "jz", "bloch_length"]
    assert len(rows) == 6 and float(rows[0][1]) == pytest.approx(0.2)
    assert table(out / "husimi.csv")[0] == ["theta", "phi", "Q"]
    m = check_manifest(out, ["steady_state.csv", "husimi.csv"])
    assert m["subcommand"] == "steady-state"
    assert m["config"]["model"]["n_atoms"] == 6


def test_meanfield(tmp_path):
    code, out = run(tmp_path, "meanfield", {"kind": "meanfield", "t_final": 2.0, "n_points": 21})
    assert code == 0
    cols, rows = table(out / "meanfield.csv")
    assert cols == ["t", "sx", "sy", "sz", "b", "norm_drift"] and len(rows) == 21
    m = check_manifest(out, ["meanfield.csv"])
    assert m["diagnostics"]["phase"] in {"Superradiant", "MultistableDecaying", "MultistableOscillating", "Normal"}
    assert m["diagnostics"]["max_energy_error"] < 1e-6


def test_dynamics_and_resume(tmp_path):
    code, out = run(tmp_path, "dynamics", {"kind": "dynamics", "t_final": 1.0, "n_points": 11})
    assert code == 0
    cols, rows = table(out / "trajectory.csv")
    assert cols == ["t", "jx", "jy", "jz", "xi2", "trace_err", "min_eig"] and len(rows) == 11
    check_manifest(out, ["trajectory.csv", "checkpoint.bin"])
    rho, p, t = load_checkpoint(out / "checkpoint.bin")
    assert t == 1.0 and p.n_atoms == 6

    # continue 1 -> 2 from the checkpoint, compare with a straight run to 2
    task = {"kind": "dynamics", "t_final": 2.0, "n_points": 11, "resume_from": str(out / "checkpoint.bin")}
    assert run(tmp_path, "dynamics", task, out="resumed", name="r.json")[0] == 0
    assert run(tmp_path, "dynamics", {"kind": "dynamics", "t_final": 2.0, "n_points": 3}, out="straight", name="s.json")[0] == 0
    resumed = table(tmp_path / "resumed" / "trajectory.csv")[1]
    straight = table(tmp_path / "straight" / "trajectory.csv")[1]
    assert float(resumed[0][0]) == 1.0
    assert float(resumed[-1][3]) == pytest.approx(float(straight[-1][3]), abs=1e-6)


def test_resume_rejects_mismatch(tmp_path):
    assert run(tmp_path, "dynamics", {"kind": "dynamics", "t_final": 0.5, "n_points": 3})[0] == 0
    ck = str(tmp_path / "out" / "checkpoint.bin")
    other = dict(MODEL, n_atoms=5)
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"model": other, "task": {"kind": "dynamics", "t_final": 1.0, "resume_from": ck}}))
    assert main(["dynamics", "--config", str(path), "--out", str(tmp_path / "x")]) == 2
    task = {"kind": "dynamics", "t_final": 0.4, "resume_from": ck}
    assert run(tmp_path, "dynamics", task, out="y", name="past.json")[0] == 2


def test_spectrum(tmp_path):
    task = {"kind": "spectrum", "k": 10, "omega_ratios": [0.5, 2.0], "n_list": [3, 4]}
    code, out = run(tmp_path, "spectrum", task)
    assert code == 0
    cols, rows = table(out / "spectrum.csv")
    assert cols == ["omega", "n_atoms", "idx", "re_lambda", "im_lambda"] and len(rows) == 40
    cols, rows = table(out / "gaps.csv")
    assert cols == ["omega", "n_atoms", "gap_re", "gap_im"] and len(rows) == 4
    check_manifest(out, ["spectrum.csv", "gaps.csv"])


def test_envelope(tmp_path):
    task = {"kind": "envelope", "t_final": 0.5, "n_points": 6, "exact": True, "fit_n": [20, 40, 80]}
    code, out = run(tmp_path, "envelope", task)
    assert code == 0
    cols, rows = table(out / "envelope.csv")
    assert cols == ["t", "n_atoms", "jz_exact_envelope", "jz_averaged", "jz_analytic_full", "jz_analytic_short"]
    assert float(rows[0][2]) == pytest.approx(-3.0) and float(rows[0][3]) == pytest.approx(-3.0)
    fit = json.loads((out / "envelope_fit.json").read_text())
    assert fit["n_values"] == [20, 40, 80]
    check_manifest(out, ["envelope.csv", "envelope_fit.json"])


def test_envelope_requires_south_pole(tmp_path):
    task = {"kind": "envelope", "t_final": 0.5}
    code, _ = run(tmp_path, "envelope", task, initial_state={"kind": "north_pole"})
    assert code == 2


SWEEP = {
    "kind": "sweep",
    "axes": [{"name": "omega", "min": 0.5, "max": 3.0, "points": 4}, {"name": "chi", "min": 0.0, "max": 1.875, "points": 2}],
    "cell": {"kind": "steady-state"},
}


def test_sweep_layout_and_json(tmp_path):
    code, out = run(tmp_path, "sweep", SWEEP)
    assert code == 0
    cols, rows = table(out / "sweep.csv")
    assert cols[:7] == ["omega_ratio", "chi_ratio", "n_atoms", "chi", "omega", "status", "error"]
    assert len(rows) == 8
    # omega is the outer axis
    assert [r[0] for r in rows[:2]] == ["0.5", "0.5"] and [r[1] for r in rows[:2]] == ["0.0", "1.875"]
    assert all(r[5] == "ok" for r in rows)
    code, out = run(tmp_path, "sweep", SWEEP, out="j", output={"format": "json"})
    data = json.loads((out / "sweep.json").read_text())
    assert data["columns"] == cols and len(data["rows"]) == 8


def test_sweep_two_points(tmp_path):
    task = {"kind": "sweep", "axes": [{"name": "omega", "min": 1.0, "max": 3.0, "points": 2}], "cell": {"kind": "phase"}}
    code, out = run(tmp_path, "sweep", task)
    assert code == 0 and len(table(out / "sweep.csv")[1]) == 2


def test_sweep_bytes_identical_across_workers(tmp_path, monkeypatch):
    task = {
        "kind": "sweep",
        "axes": [{"name": "omega", "min": 1.0, "max": 3.0, "points": 5}],
        "cell": {"kind": "time-averaged-inversion", "window_t": 0.3},
    }
    assert run(tmp_path, "sweep", task, out="w1", args=("--workers", "1"))[0] == 0
    assert run(tmp_path, "sweep", task, out="w2", args=("--workers", "2"))[0] == 0
    monkeypatch.setenv(runner.WORKERS_ENV, "3")
    assert run(tmp_path, "sweep", task, out="w3")[0] == 0
    a = (tmp_path / "w1" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "w2" / "sweep.csv").read_bytes() == (tmp_path / "w3" / "sweep.csv").read_bytes()
    assert manifest(tmp_path / "w2")["diagnostics"]["workers"] == 2
    assert manifest(tmp_path / "w3")["diagnostics"]["workers"] == 3


def test_worker_precedence(monkeypatch):
    cfg = parse_config_dict({"model": MODEL, "task": {"kind": "steady-state"}, "parallelism": {"workers": 4}})
    monkeypatch.delenv(runner.WORKERS_ENV, raising=False)
    assert runner.resolve_workers(None, cfg) == 4
    monkeypatch.setenv(runner.WORKERS_ENV, "2")
    assert runner.resolve_workers(None, cfg) == 2
    assert runner.resolve_workers(5, cfg) == 5
    monkeypatch.setenv(runner.WORKERS_ENV, "lots")
    with pytest.raises(runner.C.ConfigError):
        runner.resolve_workers(None, cfg)


def test_failed_cell_is_flagged(tmp_path, monkeypatch):
    real = runner.evaluate_cell

    def flaky(cell, p, state, seed):
        if p.omega > 2.0 * p.omega_sr - 1e-9:
            raise StiffnessError("step size underflow", 0.25)
        return real(cell, p, state, seed)

    monkeypatch.setattr(runner, "evaluate_cell", flaky)
    task = {"kind": "sweep", "axes": [{"name": "omega", "min": 1.0, "max": 2.0, "points": 3}], "cell": {"kind": "steady-state"}}
    code, out = run(tmp_path, "sweep", task, args=("--workers", "1"))
    assert code == 0
    cols, rows = table(out / "sweep.csv")
    st, err, val = cols.index("status"), cols.index("error"), cols.index("jz")
    assert [r[st] for r in rows] == ["ok", "ok", "failed"]
    assert "StiffnessError" in rows[2][err] and rows[2][val] == "nan"
    assert manifest(out)["diagnostics"]["failed_cells"] == 1


def test_all_cells_failed_exit_3(tmp_path, monkeypatch):
    def broken(cell, p, state, seed):
        raise StiffnessError("step size underflow", 0.0)

    monkeypatch.setattr(runner, "evaluate_cell", broken)
    task = {"kind": "sweep", "axes": [{"name": "omega", "min": 1.0, "max": 2.0, "points": 2}], "cell": {"kind": "steady-state"}}
    assert run(tmp_path, "sweep", task, args=("--workers", "1"))[0] == 3


def test_numerical_failure_exit_3(tmp_path):
    task = {"kind": "dynamics", "t_final": 1.0, "rel_tol": 1e-300, "abs_tol": 1e-300, "eig_every": 0}
    code, _ = run(tmp_path, "dynamics", task)
    assert code == 3


def test_phase_diagram(tmp_path):
    task = {
        "kind": "phase-diagram",
        "omega": {"name": "omega", "min": 0.5, "max": 3.0, "points": 3},
        "chi": {"name": "chi", "min": 0.0, "max": 1.875, "points": 2},
        "disc": {"n_theta0": 1, "n_phi0": 2, "theta_max": 0.3},
    }
    code, out = run(tmp_path, "phase-diagram", task)
    assert code == 0
    cols, rows = table(out / "phase_diagram.csv")
    assert cols == ["omega", "chi", "label", "omega_c1", "omega_c"] and len(rows) == 6
    assert rows[0][2] == "Superradiant" and rows[-1][2] == "Normal"
    cols, rows = table(out / "phase_diagram_disc.csv")
    assert cols[-3:] == ["theta0", "phi0", "oscillates"] and len(rows) == 6 * 3
    check_manifest(out, ["phase_diagram.csv", "phase_diagram_disc.csv"])


def test_validation_exit_codes(tmp_path, capsys):
    # task kind does not match subcommand
    path = write_cfg(tmp_path, {"kind": "steady-state"})
    assert main(["dynamics", "--config", path, "--out", str(tmp_path / "o")]) == 2
    # schema error
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": dict(MODEL, gamma=-1.0), "task": {"kind": "steady-state"}}))
    assert main(["steady-state", "--config", str(bad)]) == 2
    assert "model.gamma" in capsys.readouterr().err
    # usage errors
    assert main(["bogus", "--config", path]) == 2
    assert main(["steady-state"]) == 2
    # unwritable output location
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["steady-state", "--config", path, "--out", str(blocker / "sub")]) == 2


def test_output_directory_from_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path = write_cfg(tmp_path, {"kind": "steady-state"}, output={"directory": "from_cfg"})
    assert main(["steady-state", "--config", path]) == 0
    assert (tmp_path / "from_cfg" / "manifest.json").exists()


@pytest.mark.skipif(shutil.which("cavityspin") is None, reason="console script not installed")
def test_console_script(tmp_path):
    path = write_cfg(tmp_path, {"kind": "steady-state"})
    res = subprocess.run(["cavityspin", "steady-state", "--config", path, "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    res = subprocess.run([sys.executable, "-m", "cavityspin.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "Exit codes" in res.stdout
