import json

import numpy as np
import pytest

from kamforce.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out.strip().splitlines()[-1]
    return code, json.loads(out)


def test_alpha_free_closed_form(tmp_path, capsys):
    code, msg = run(capsys, "alpha", "--model", "free", "--grid", "64", "--substeps", "8",
                    "--c-range=-1:1:0.25", "--out", str(tmp_path))
    assert code == 0 and msg["status"] == "ok"
    data = np.loadtxt(tmp_path / "alpha.csv", delimiter=",", skiprows=1)
    assert data.shape == (9, 4)
    c, lo, hi = data[:, 0], data[:, 1], data[:, 2]
    assert np.all(lo <= c**2 / 2 + 1e-3) and np.all(c**2 / 2 - 1e-3 <= hi)
    summary = json.loads((tmp_path / "alpha.json").read_text())
    assert summary["config_hash"] == msg["config_hash"] and "error_budget" in summary


def test_empty_range_header_only(tmp_path, capsys):
    code, _ = run(capsys, "alpha", "--grid", "16", "--substeps", "4", "--c-range", "1:0:0.1",
                  "--out", str(tmp_path))
    assert code == 0
    assert (tmp_path / "alpha.csv").read_text().strip() == "c1,lower,upper,value"


def test_aubry_pendulum_one_class(tmp_path, capsys):
    code, _ = run(capsys, "aubry", "--grid", "128", "--substeps", "8", "--out", str(tmp_path),
                  "--cache", str(tmp_path / "cache"))
    assert code == 0
    rep = json.loads((tmp_path / "aubry.json").read_text())
    assert rep["n_classes"] == 1
    assert abs(rep["class_centers"][0][0]) < 1 / 128
    assert set(rep["mather"]) <= set(rep["aubry"]["cells"]) <= set(rep["mane"]["cells"])
    # the cached barrier is reused and gives the same artifact
    first = (tmp_path / "aubry.json").read_bytes()
    code, _ = run(capsys, "aubry", "--grid", "128", "--substeps", "8", "--out", str(tmp_path),
                  "--cache", str(tmp_path / "cache"))
    assert code == 0 and (tmp_path / "aubry.json").read_bytes() == first


def test_determinism(tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        code, _ = run(capsys, "solve", "--grid", "32", "--substeps", "4", "--seeds", "2",
                      "--seed", "7", "--out", str(tmp_path / name))
        assert code == 0
        outs.append([(tmp_path / name / f).read_bytes()
                     for f in ("solve.json", "solution_0.bin", "solution_1.bin")])
    assert outs[0] == outs[1]


def test_config_file_and_flags(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("model = forced_pendulum\nparam.eps = 0.2  # forcing\ngrid = 32\nsubsteps = 4\n")
    code, msg = run(capsys, "barrier", "--config", str(cfg), "--N", "8", "--N-prime", "16",
                    "--out", str(tmp_path))
    assert code == 0
    rep = json.loads((tmp_path / "barrier.json").read_text())
    assert rep["model"]["params"]["eps"] == 0.2 and rep["barrier"]["N"] == 8
    assert (tmp_path / "barrier.bin").exists()


def test_scan_reports_threshold(tmp_path, capsys):
    code, _ = run(capsys, "scan", "--grid", "128", "--substeps", "8", "--c-range=1.2:1.5:0.05",
                  "--out", str(tmp_path))
    assert code == 0
    rep = json.loads((tmp_path / "scan.json").read_text())
    assert abs(rep["scan"]["threshold"] - 4 / np.pi) < 0.1


def test_negative_result_exit_code(tmp_path, capsys):
    code, msg = run(capsys, "diffuse", "--grid", "64", "--substeps", "8", "--P", "1.5",
                    "--P-prime", "1.55", "--step", "0.05", "--out", str(tmp_path))
    assert code == 2 and msg["status"] == "negative"
    chain = json.loads((tmp_path / "chain.json").read_text())
    assert chain["chain"]["failure"]["code"] in ("obstruction", "no_connection")


@pytest.mark.parametrize("argv", [["alpha", "--model", "nope"],
                                  ["alpha", "--grid", "8,8"],
                                  ["alpha", "--param", "kappa"],
                                  ["aubry", "--tol-aubry", "1", "--tol-mane", "0.5", "--grid", "16",
                                   "--substeps", "4"]])
def test_errors_exit_one(tmp_path, capsys, argv):
    code, msg = run(capsys, *argv, "--out", str(tmp_path))
    assert code == 1 and msg["status"] == "error" and msg["code"]


def test_custom_model(tmp_path, capsys):
    code, _ = run(capsys, "alpha", "--model", "custom", "--expr", "v**2/2", "--grid", "32",
                  "--substeps", "4", "--c", "0.5", "--out", str(tmp_path))
    assert code == 0
    row = np.loadtxt(tmp_path / "alpha.csv", delimiter=",", skiprows=1)
    assert row[3] == pytest.approx(0.125, abs=5e-3)
