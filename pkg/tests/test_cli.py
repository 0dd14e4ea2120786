import json
import subprocess
import sys

import numpy as np

from roughstab.cli import _chunks, main


def run(tmp_path, *argv, out="out"):
    d = tmp_path / out
    code = main([*argv, "--out", str(d)])
    return code, d


def test_sample_rows_and_manifest(tmp_path):
    code, d = run(tmp_path, "sample", "--hurst", "0.45", "--n", "1024", "--seed", "7")
    assert code == 0
    assert len((d / "path.csv").read_text().splitlines()) == 1025
    man = json.loads((d / "manifest.json").read_text())
    assert man["command"] == "sample" and man["config"]["seed"] == 7
    assert set(man["outputs"]) == {"path.csv"}


def test_sample_is_byte_identical(tmp_path):
    _, a = run(tmp_path, "sample", "--n", "200", "--seed", "7", out="a")
    _, b = run(tmp_path, "sample", "--n", "200", "--seed", "7", out="b")
    assert (a / "path.csv").read_bytes() == (b / "path.csv").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()


def test_validation_exit_code(tmp_path, capsys):
    code, d = run(tmp_path, "sample", "--hurst", "1.5")
    assert code == 2
    assert "error" in capsys.readouterr().err
    assert not d.exists()


def test_bad_config_exit_codes(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert run(tmp_path, "sample", "--config", str(cfg))[0] == 2
    cfg.write_text('{"bogus": 1}')
    assert run(tmp_path, "sample", "--config", str(cfg))[0] == 2
    assert run(tmp_path, "sample", "--config", str(tmp_path / "none.json"))[0] == 4
    assert run(tmp_path, "sample", "--jobs", "0")[0] == 2


def test_io_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["sample", "--n", "16", "--out", str(blocker / "sub")]) == 4
    assert run(tmp_path, "norms", "--input", str(tmp_path / "missing.csv"))[0] == 4


def test_numerical_exit_code(tmp_path):
    code, d = run(tmp_path, "solve", "--preset", "scalar-linear", "--sigma", "60",
                  "--n", "257", "--horizon", "5")
    assert code == 3
    assert not d.exists()


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 50, "seed": 3, "hurst": 0.4}))
    _, d = run(tmp_path, "sample", "--config", str(cfg), "--seed", "5")
    conf = json.loads((d / "manifest.json").read_text())["config"]
    assert conf["n"] == 50 and conf["hurst"] == 0.4 and conf["seed"] == 5


def test_manifest_replay(tmp_path):
    _, a = run(tmp_path, "greedy", "--n", "65", "--gamma", "0.8", "--sigma", "0.02", "--seed", "2", out="a")
    _, b = run(tmp_path, "greedy", "--config", str(a / "manifest.json"), out="b")
    for name in ("partition.csv", "greedy_report.json", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_greedy_huge_gamma(tmp_path, capsys):
    code, d = run(tmp_path, "greedy", "--gamma", "1e9", "--n", "65")
    assert code == 0
    assert json.loads((d / "greedy_report.json").read_text())["count"] == 0
    assert len((d / "partition.csv").read_text().splitlines()) == 3


def test_greedy_from_input_file(tmp_path):
    _, s = run(tmp_path, "sample", "--n", "65", "--dims", "2", out="s")
    code, d = run(tmp_path, "greedy", "--input", str(s / "path.csv"), "--gamma", "1e9")
    assert code == 0


def test_lift_and_norms(tmp_path):
    code, d = run(tmp_path, "lift", "--n", "33", "--dims", "2")
    rep = json.loads((d / "lift_report.json").read_text())
    assert code == 0 and rep["geometric"] and rep["chen_defect"] < 1e-10
    code, d = run(tmp_path, "norms", "--n", "33", "--beta", "0.3", out="n")
    rep = json.loads((d / "norms.json").read_text())
    assert code == 0 and rep["p_var"]["value"] <= rep["rough_path_norm"]["value"] + 1e-12


def test_tail_jobs_invariance(tmp_path):
    args = ("tail", "--samples", "12", "--n", "65", "--gamma", "0.5")
    _, a = run(tmp_path, *args, "--jobs", "1", out="a")
    _, b = run(tmp_path, *args, "--jobs", "3", out="b")
    assert (a / "tail.csv").read_bytes() == (b / "tail.csv").read_bytes()
    assert (a / "tail.csv").read_text().splitlines()[0] == "n,count,prob"


def test_stability_jobs_invariance_and_scalar_rate(tmp_path):
    args = ("stability", "--preset", "scalar-linear", "--lambda", "1", "--sigma", "0.2",
            "--seeds", "6", "--horizon", "20", "--n", "1025")
    _, a = run(tmp_path, *args, out="a")
    _, b = run(tmp_path, *args, "--jobs", "2", out="b")
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    rows = (a / "sweep.csv").read_text().splitlines()
    assert rows[0] == "cg,seed,exponent,stable"
    exps = np.array([float(r.split(",")[2]) for r in rows[1:]])
    assert abs(exps.mean() + 1) < 0.1


def test_solve_with_residuals(tmp_path):
    code, d = run(tmp_path, "solve", "--preset", "fhn-2d", "--sigma", "0.1", "--n", "257",
                  "--horizon", "2", "--residuals")
    assert code == 0
    assert {"trajectory.csv", "residuals.json", "solve_report.json"} <= {p.name for p in d.iterdir()}


def test_chunks_are_disjoint_and_cover():
    for total in (1, 7, 100):
        for jobs in (1, 3, 8, 200):
            ch = _chunks(total, jobs)
            assert sum(c for _, c in ch) == total
            assert [lo for lo, _ in ch] == list(np.cumsum([0] + [c for _, c in ch])[:-1])


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "roughstab", "sample", "--hurst", "2",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 2
