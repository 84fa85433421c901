import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from qmcfast import cli, ldseq


def run(capsys, *argv):
    rc = cli.main(list(argv))
    out, err = capsys.readouterr()
    return rc, out, err


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_gen_lattice_example(capsys, tmp_path):
    vec = tmp_path / "g.txt"
    vec.write_text("# lattice d=2\n1\n3\n")
    rc, out, _ = run(capsys, "gen", "--seq", "lattice", "--n", "4", "--d", "2", "--rand", "none",
                     "--vector-file", str(vec), "--order", "linear")
    assert rc == 0
    assert rows(out) == [["x0", "x1"], ["0", "0"], ["0.25", "0.75"], ["0.5", "0.5"], ["0.75", "0.25"]]


def test_gen_default_lattice_shape(capsys):
    rc, out, _ = run(capsys, "gen", "--seq", "lattice", "--n", "4", "--d", "2", "--rand", "none")
    assert rc == 0
    r = rows(out)
    assert r[0] == ["x0", "x1"] and len(r) == 5 and r[1] == ["0", "0"]


def test_gen_empty(capsys):
    rc, out, _ = run(capsys, "gen", "--seq", "iid", "--n", "0", "--d", "3")
    assert rc == 0 and out == "x0,x1,x2\n"


@pytest.mark.parametrize(
    "flags",
    [
        ["--seq", "iid", "--d", "3"],
        ["--seq", "dnet", "--d", "4", "--rand", "nus"],
        ["--seq", "dnet", "--d", "2", "--rand", "lms-ds", "--alpha", "2"],
        ["--seq", "lattice", "--d", "3", "--rand", "shift"],
        ["--seq", "halton", "--d", "3", "--rand", "lms-ds"],
    ],
)
def test_gen_byte_identical(capsys, flags):
    args = ["gen", "--n", "64", "--seed", "17", *flags]
    _, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args)
    assert a == b
    X = np.loadtxt(io.StringIO(a), delimiter=",", skiprows=1)
    assert X.shape[0] == 64 and np.all((X >= 0) & (X < 1))


def test_full_precision_output(capsys):
    _, out, _ = run(capsys, "gen", "--seq", "iid", "--n", "5", "--d", "2", "--seed", "3")
    X = np.loadtxt(io.StringIO(out), delimiter=",", skiprows=1)
    np.testing.assert_array_equal(X, ldseq.iid_uniform(3, 5, 2))


def test_gen_usage_errors(capsys, tmp_path):
    assert run(capsys, "gen", "--n", "3", "--bogus")[0] == 1
    assert run(capsys, "gen", "--seq", "lattice", "--n", "4", "--rand", "nus")[0] == 1
    bad = tmp_path / "g.txt"
    bad.write_text("# lattice d=2\n1\nx\n")
    rc, _, err = run(capsys, "gen", "--seq", "lattice", "--n", "4", "--d", "2", "--vector-file", str(bad))
    assert rc == 1 and ":3" in err


def test_manifest_and_rerun(capsys, tmp_path):
    out = tmp_path / "pts.csv"
    rc, _, _ = run(capsys, "gen", "--seq", "dnet", "--n", "32", "--d", "3", "--rand", "lms-ds", "--seed", "5",
                   "--out", str(out))
    assert rc == 0
    man = json.loads((tmp_path / "pts.csv.manifest.json").read_text())
    assert man["subcommand"] == "gen" and man["seed"] == 5 and "numpy" in man["versions"]
    again = tmp_path / "again.csv"
    assert run(capsys, "rerun", "--manifest", str(tmp_path / "pts.csv.manifest.json"), "--out", str(again))[0] == 0
    assert again.read_bytes() == out.read_bytes()


def test_transform(capsys):
    rc, out, _ = run(capsys, "transform", "--kind", "fwht", "--values", "1,0,0,0")
    assert rc == 0
    r = np.array(rows(out)[1:], dtype=float)
    np.testing.assert_allclose(r[:, 1], 0.5)
    assert run(capsys, "transform", "--kind", "fftbr", "--values", "1,2,3")[0] == 1


def test_kernel_check(capsys):
    rc, out, err = run(capsys, "kernel", "--family", "dsi_adaptive_sum", "--d", "2", "--n", "16", "--seed", "1", "--check")
    assert rc == 0 and len(rows(out)) == 17
    rep = json.loads(err)
    assert rep["max_abs_matvec_diff"] < 1e-10
    assert abs(rep["logdet_fast"] - rep["logdet_dense"]) < 1e-8


def test_integrate_ishigami(capsys):
    rc, out, _ = run(capsys, "integrate", "--problem", "ishigami", "--abs-tol", "0.01", "--algo", "student-t", "--seed", "1")
    rep = json.loads(out)
    assert rc == 0 and abs(rep["s_hat"] - 3.5) <= 0.01


def test_integrate_keister(capsys):
    rc, out, _ = run(capsys, "integrate", "--problem", "keister", "--d", "6", "--abs-tol", "1e-3", "--seed", "2")
    assert rc == 0
    assert json.loads(out)["error"] <= 1e-3


def test_integrate_bayes(capsys):
    rc, out, _ = run(capsys, "integrate", "--problem", "genz_oscillatory", "--algo", "bayes", "--abs-tol", "1e-4", "--seed", "0")
    rep = json.loads(out)
    assert rc == 0 and rep["error"] <= 1e-4


def test_integrate_exit_codes(capsys):
    assert run(capsys, "integrate", "--problem", "ishigami", "--abs-tol", "0", "--rel-tol", "0")[0] == 1
    assert run(capsys, "integrate", "--problem", "rosenbrock")[0] == 1
    assert run(capsys, "integrate", "--problem", "elliptic_1d")[0] == 1
    rc, out, _ = run(capsys, "integrate", "--problem", "keister", "--abs-tol", "1e-9", "--max-samples", "4096")
    assert rc == 2 and json.loads(out)["budget_exhausted"]


def test_fit(capsys, tmp_path):
    rc, out, _ = run(capsys, "fit", "--problem", "genz_oscillatory", "--n", "256", "--seed", "0",
                     "--save", str(tmp_path / "m.json"))
    rep = json.loads(out)
    assert rc == 0 and abs(rep["mu_hat"] - rep["reference"]) < 1e-4
    assert (tmp_path / "m.json").exists()
    assert run(capsys, "fit", "--problem", "genz_oscillatory", "--n", "100")[0] == 1
    assert run(capsys, "fit", "--problem", "genz_oscillatory", "--family", "matern")[0] == 1


def test_convergence_single_row(capsys):
    rc, out, _ = run(capsys, "convergence", "--algo", "mc", "--problem", "sumxex", "--budgets", "256", "--seeds", "1")
    r = rows(out)
    assert rc == 0 and r[0] == ["budget", "seed", "error", "stderr"]
    data = [x for x in r[1:] if x[0] != "median_slope"]
    assert len(data) == 1 and data[0][0] == "256"
    assert r[-1][0] == "median_slope"


def _slope(capsys, algo):
    rc, out, _ = run(capsys, "convergence", "--algo", algo, "--problem", "sumxex", "--budgets",
                     ",".join(f"2^{k}" for k in range(8, 15)), "--seeds", "20")
    assert rc == 0
    last = rows(out)[-1]
    assert last[0] == "median_slope"
    return float(last[2])


def test_convergence_slopes(capsys):
    s_mc = _slope(capsys, "mc")
    s_rqmc = _slope(capsys, "rqmc")
    assert abs(s_mc + 0.5) <= 0.1
    assert s_rqmc < s_mc


def test_ml(capsys):
    rc, out, err = run(capsys, "ml", "--algo", "rqmc", "--budget", "4096", "--seed", "0", "--levels", "2")
    assert rc == 0
    r = rows(out)
    assert r[0] == ["level", "n", "mean", "variance"] and r[-1][0] == "total"
    assert len(r) == 4
    summary = json.loads(err)
    assert summary["cost"] <= 4096
    assert abs(float(r[-1][2]) - summary["estimate"]) == 0
    assert run(capsys, "ml", "--algo", "mc", "--budget", "4")[0] == 1


def test_console_script():
    p = subprocess.run([sys.executable, "-m", "qmcfast.cli", "gen", "--n", "2", "--d", "1", "--seq", "iid", "--seed", "0"],
                       capture_output=True, text=True)
    assert p.returncode == 0 and p.stdout.startswith("x0\n")
