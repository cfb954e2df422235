import csv
import json

import pytest

from csmabp.cli import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, fmt, main


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def fig1_file(tmp_path):
    path = tmp_path / "fig1.json"
    assert main(["gen", "fig1", "-o", str(path)]) == EXIT_OK
    return path


def test_fmt():
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(3) == "3" and fmt(True) == "True" and fmt(None) == "None"


def test_gen_cayley(tmp_path):
    path = tmp_path / "c.json"
    assert main(["gen", "cayley", "--z", "3", "--layers", "4", "-o", str(path)]) == EXIT_OK
    assert len(json.loads(path.read_text())["links"]) == 46


def test_randomized_commands_need_seed(tmp_path, capsys):
    assert main(["gen", "random", "--n", "10", "-o", str(tmp_path / "r.json")]) == EXIT_ERROR
    assert "--seed" in capsys.readouterr().err
    assert main(["gen", "random", "--n", "10", "--degree", "3", "--seed", "1", "-o", str(tmp_path / "r.json")]) == 0


def test_solve_exact(fig1_file, tmp_path):
    out = tmp_path / "th.csv"
    assert main(["solve", str(fig1_file), "--algo", "exact", "--rho", "1", "-o", str(out)]) == EXIT_OK
    th = {int(r["link"]): float(r["th"]) for r in read_csv(out)}
    assert th == pytest.approx({1: 3 / 7, 2: 1 / 7, 3: 2 / 7, 4: 2 / 7}, abs=1e-11)


@pytest.mark.parametrize("algo", ["bp", "sbp", "gbp"])
def test_solve_iterative(fig1_file, tmp_path, algo):
    out = tmp_path / "th.csv"
    assert main(["solve", str(fig1_file), "--algo", algo, "--tol", "1e-10", "-o", str(out)]) == EXIT_OK
    assert len(read_csv(out)) == 4


def test_solve_reports_non_convergence(fig1_file, tmp_path):
    code = main(["solve", str(fig1_file), "--algo", "bp", "--tol", "1e-14", "--max-iter", "2",
                 "-o", str(tmp_path / "x.csv")])
    assert code == EXIT_NOT_CONVERGED


def test_targets_and_invert(fig1_file, tmp_path):
    targets = tmp_path / "t.json"
    assert main(["targets", str(fig1_file), "--gamma", "0.8", "--seed", "3", "-o", str(targets)]) == EXIT_OK
    out = tmp_path / "rho.csv"
    assert main(["invert", str(fig1_file), "--algo", "igbp", "--targets", str(targets), "--tol", "1e-10",
                 "--max-iter", "5000", "-o", str(out)]) == EXIT_OK
    assert {r["link"] for r in read_csv(out)} == {"1", "2", "3", "4"}


def test_invert_rejects_infeasible_csv(fig1_file, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("link,target\n1,0.6\n2,0.5\n3,0.2\n4,0.2\n")
    assert main(["invert", str(fig1_file), "--algo", "igbp", "--targets", str(bad)]) == EXIT_ERROR
    assert "clique" in capsys.readouterr().err


@pytest.mark.parametrize("algo", ["bp-acsma", "gbp-acsma", "oracle"])
def test_optimize(fig1_file, tmp_path, algo, capsys):
    out, trace = tmp_path / "o.csv", tmp_path / "tr.csv"
    args = ["optimize", str(fig1_file), "--algo", algo, "--tol", "1e-8", "-o", str(out)]
    if algo != "oracle":
        args += ["--trace", str(trace)]
    assert main(args) == EXIT_OK
    assert "U=" in capsys.readouterr().err
    assert len(read_csv(out)) == 4


def test_optimize_measurement_baseline(fig1_file, tmp_path):
    code = main(["optimize", str(fig1_file), "--algo", "acsma", "--T", "20", "--max-iter", "30", "--seed", "0",
                 "-o", str(tmp_path / "o.csv"), "--trace", str(tmp_path / "tr.csv")])
    assert code in (EXIT_OK, EXIT_NOT_CONVERGED)
    assert len(read_csv(tmp_path / "tr.csv")) == 31


def test_simulate(fig1_file, tmp_path):
    out = tmp_path / "s.csv"
    assert main(["simulate", str(fig1_file), "--rho", "1", "--horizon", "2000", "--tx-dist", "uniform",
                 "--seed", "2", "-o", str(out)]) == EXIT_OK
    assert set(read_csv(out)[0]) == {"link", "th", "stderr"}


def test_regions(fig1_file, tmp_path):
    out = tmp_path / "rg.json"
    assert main(["regions", str(fig1_file), "-o", str(out)]) == EXIT_OK
    data = json.loads(out.read_text())
    assert data["owner"] is None and data["regions"]
    assert main(["regions", str(fig1_file), "--local", "1", "-o", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["owner"] == 1


def test_distributed_with_churn(fig1_file, tmp_path):
    churn = tmp_path / "churn.json"
    churn.write_text(json.dumps([{"round": 10, "op": "remove_link", "args": [4]}]))
    out = tmp_path / "d.csv"
    assert main(["distributed", str(fig1_file), "--agents", "gbp", "--rounds", "30", "--t1", "5",
                 "--churn", str(churn), "-o", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert {r["link"] for r in rows if r["round"] == "30"} == {"1", "2", "3"}


def test_distributed_inverse_needs_targets(fig1_file, capsys):
    assert main(["distributed", str(fig1_file), "--agents", "ibp"]) == EXIT_ERROR


def test_bench_small(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "accuracy", "--graphs", "1", "--links", "12", "--degree", "3", "--seed", "0",
                 "-o", str(out)]) == EXIT_OK
    row = read_csv(out)[0]
    assert float(row["gbp_error"]) <= float(row["bp_error"]) + 1e-9


def test_missing_file(capsys):
    assert main(["solve", "/nonexistent.json"]) == EXIT_ERROR
