import json

import numpy as np
import pytest

from fracmag.cli import build_parser, run


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


SMALL = "[grid]\nN = 2\nn = 8\nL = 2\n"


def test_thresholds_prints_lambda_star(tmp_path, capsys):
    cfg = write(tmp_path, "[grid]\nN = 3\nn = 4\n[problem]\ns = 0.5\np = 2\nq = 1.5\n"
                          "[thresholds]\nS = 1\nH_norm = 1\nK_norm = 1\n")
    assert run(["thresholds", "-c", cfg, "-o", str(tmp_path / "out")]) == 0
    data = json.loads(capsys.readouterr().out)
    assert abs(data["lambda_star_1"] - 0.25) < 1e-12
    assert abs(data["c_PS"] - 1 / 6) < 1e-12


def test_verify_default_config_exits_zero(tmp_path, capsys):
    assert run(["verify", "-o", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["all_passed"]
    assert "FAIL" not in capsys.readouterr().out


def test_missing_config_exit_two(tmp_path, capsys):
    assert run(["grid-info", "-c", str(tmp_path / "absent.ini"), "-o", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_bad_config_exit_two(tmp_path, capsys):
    cfg = write(tmp_path, "[grid]\nN = 2\nL = -1\n")
    assert run(["grid-info", "-c", cfg, "-o", str(tmp_path / "o")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_numerical_failure_exit_three(tmp_path, capsys):
    cfg = write(tmp_path, SMALL + "[problem]\nq = 1.5\n")
    assert run(["solve-mp", "-c", cfg, "-o", str(tmp_path / "o")]) == 3
    assert "q >= p" in capsys.readouterr().err
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["exit_code"] == 3


@pytest.mark.parametrize("command", ["grid-info", "seminorm", "operator", "energy", "density", "sobolev"])
def test_commands_write_manifest(tmp_path, command):
    cfg = write(tmp_path, SMALL + "[sobolev]\nmax_iters = 20\n")
    out = tmp_path / command
    assert run([command, "-c", cfg, "-o", str(out), "--seed", "5"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["command"] == command
    assert manifest["config"]["grid"]["n"] == 8
    assert manifest["wall_time_s"] >= 0
    assert (out / "summary.json").exists()


def test_manifest_rerun_reproduces_outputs(tmp_path):
    cfg = write(tmp_path, SMALL + "[field]\nwavevector = 0.5, -1\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["energy", "-c", cfg, "-o", str(a)]) == 0
    assert run(["energy", "-c", str(a / "manifest.json"), "-o", str(b)]) == 0
    assert (a / "gradient.csv").read_bytes() == (b / "gradient.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


def test_outputs_independent_of_worker_count(tmp_path, monkeypatch):
    cfg = write(tmp_path, "[grid]\nN = 2\nn = 12\nL = 2\n[sobolev]\nS = 20\n")
    outs = []
    for workers in ("1", "4"):
        monkeypatch.setenv("FRACMAG_WORKERS", workers)
        out = tmp_path / workers
        assert run(["solve-mp", "-c", cfg, "-o", str(out)]) == 0
        outs.append(out)
    for name in ("solution.csv", "trace.csv", "summary.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_solve_multistart_and_diagnose(tmp_path):
    cfg = write(tmp_path, SMALL + "[problem]\nq = 1.5\n[sobolev]\nS = 15\n[multistart]\nk = 2\nlambda_factor = 0.5\n")
    out = tmp_path / "ms"
    assert run(["solve-multistart", "-c", cfg, "-o", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["solutions"] and all(s["energy"] < 0 for s in summary["solutions"])
    assert (out / "solution_0.csv").exists()
    cfg = write(tmp_path, "[grid]\nN = 1\nn = 256\nL = 4\n[problem]\ns = 0.25\n[sobolev]\nS = 8\n", "d.ini")
    out = tmp_path / "dg"
    assert run(["diagnose", "-c", cfg, "-o", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["atoms"]) == 1
    assert (out / "density_3.csv").exists()


def test_diagnose_directory_mode(tmp_path):
    from fracmag.lattice import Grid, sample_field, write_field_csv
    g = Grid(1, 64, 4.0)
    folder = tmp_path / "fields"
    folder.mkdir()
    for k, c in enumerate([0.0, 1.0, 2.0, 3.0]):
        write_field_csv(sample_field(lambda x: np.exp(-16 * (x[:, 0] - c) ** 2), g), folder / f"u{k}.csv")
    cfg = write(tmp_path, "[grid]\nN = 1\nn = 64\nL = 4\n[problem]\ns = 0.25\n[sobolev]\nS = 8\n"
                          "[diagnose]\nmode = directory\ndirectory = fields\nR = 1, 2\n")
    assert run(["diagnose", "-c", cfg, "-o", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["tails"]["nu_inf"] > 0.9 * summary["tails"]["total_nu"]


def test_help_shows_defaults(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--help"])
    out = capsys.readouterr().out
    assert "[solver]" in out and "residual_tol" in out and "FRACMAG_WORKERS" in out
