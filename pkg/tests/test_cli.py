import csv
import json

import jsonschema
import pytest

from sspembed.cli import EXIT_FAILED, EXIT_INPUT, EXIT_OK, InputError, RunConfig, load_schema, main


def run_cli(args, tmp_path, name="out.json"):
    out = tmp_path / name
    code = main(list(args) + ["--output", str(out)])
    text = out.read_text() if out.exists() else None
    return code, (json.loads(text) if text else None), text


def test_rank_check(tmp_path):
    code, report, _ = run_cli(["rank-check", "--sigma", "0.3"], tmp_path)
    assert code == EXIT_OK
    assert report["result"]["rank"] == 15 and report["passed"] is True
    jsonschema.validate(report, load_schema("report.json"))


def test_pipeline_2d_certificate(tmp_path):
    code, report, _ = run_cli(["pipeline", "--n", "2", "--K", "1", "--k1", "0", "--k2", "0"], tmp_path)
    assert code == EXIT_OK
    assert report["result"]["certified"] is True
    assert float(report["result"]["q0_deviation"]) <= 1e-9


def test_numbers_are_decimal_strings(tmp_path):
    _, report, _ = run_cli(["rank-check"], tmp_path)
    det = report["result"]["det_submatrix"]
    assert isinstance(det, str) and float(det) != 0


def test_reports_deterministic(tmp_path):
    args = ["pipeline", "--n", "3", "--phi", "0.7"]
    _, _, first = run_cli(args, tmp_path, "a.json")
    _, _, second = run_cli(args, tmp_path, "b.json")
    assert first == second


def test_unknown_flag_and_subcommand(capsys):
    assert main(["rank-check", "--nope"]) == EXIT_INPUT
    assert main(["frobnicate"]) == EXIT_INPUT
    assert "input error" in capsys.readouterr().err


def test_malformed_json(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["transform", "--input", str(bad)]) == EXIT_INPUT
    assert main(["transform", "--input", str(tmp_path / "missing.json")]) == EXIT_INPUT
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"hello": 1}))
    assert main(["transform", "--input", str(wrong)]) == EXIT_INPUT


def test_config_invariants():
    with pytest.raises(InputError):
        RunConfig("rank-check", tol=0.0)
    with pytest.raises(InputError):
        RunConfig("rank-check", samples=0)
    assert RunConfig("rank-check").seed == 42


def test_transform_consumes_pipeline_report(tmp_path):
    code, _, _ = run_cli(["pipeline", "--n", "2", "--K", "-0.1", "--k1", "1", "--k2", "-2"], tmp_path, "p.json")
    assert code == EXIT_OK
    code, report, _ = run_cli(["transform", "--input", str(tmp_path / "p.json")], tmp_path, "t.json")
    assert code == EXIT_OK
    res = report["result"]
    assert float(res["fd_agreement"]) <= 1e-8 and float(res["target_deviation"]) <= 1e-9
    assert res["staged_validation"]["status"] == "ok"


def test_transform_mismatched_lambda_fails_with_condition(tmp_path):
    run_cli(["pipeline", "--n", "2", "--K", "1"], tmp_path, "p.json")
    code, report, _ = run_cli(["transform", "--input", str(tmp_path / "p.json"), "--lam", "2"], tmp_path, "t.json")
    assert code == EXIT_FAILED
    assert report["passed"] is False
    assert report["result"]["condition"].startswith("trace condition")


def test_transform_3d(tmp_path):
    run_cli(["pipeline", "--n", "3", "--phi", "-0.3"], tmp_path, "p.json")
    code, report, _ = run_cli(["transform", "--input", str(tmp_path / "p.json")], tmp_path, "t.json")
    assert code == EXIT_OK and "staged_validation" not in report["result"]


def test_curvature_json_input(tmp_path):
    spec = tmp_path / "curv.json"
    spec.write_text(json.dumps({"K": "5.0", "k1": 0.5, "k2": "-1"}))
    code, report, _ = run_cli(["constraints-check", "--input", str(spec)], tmp_path)
    assert code == EXIT_OK
    spec.write_text(json.dumps({"Rhat": [[1, 0, 0], [0, -1, 0], [0, 0, 0.5]], "r": [0.1] * 15}))
    code, report, _ = run_cli(["pipeline", "--input", str(spec)], tmp_path)
    assert code == EXIT_OK and report["result"]["n"] == 3
    spec.write_text(json.dumps({"Rhat": [[1, 0], [0, 1]]}))
    assert main(["pipeline", "--input", str(spec)]) == EXIT_INPUT


def test_jet_json_input(tmp_path):
    spec = tmp_path / "jet.json"
    jet = {"n": 1, "s": 1, "kind": "jet", "jet": {"A0": [[[0.0]]], "A_lin": [[[[1.0]]]], "B0": [[2.0]]}}
    spec.write_text(json.dumps(jet))
    code, report, _ = run_cli(["check-ssp", "--input", str(spec), "--radius", "0.5"], tmp_path)
    assert code == EXIT_OK
    jet["jet"]["B0"] = [[-2.0]]
    spec.write_text(json.dumps(jet))
    code, report, _ = run_cli(["check-ssp", "--input", str(spec), "--radius", "0.5"], tmp_path)
    assert code == EXIT_FAILED and report["passed"] is False


def test_ode_demo_interior_and_exterior(tmp_path):
    code, report, _ = run_cli(["ode-demo", "--x0", "0", "--interval", "-1", "1", "--grid", "0.01"], tmp_path)
    assert code == EXIT_OK and report["result"]["expected_kernel_dim"] == 0
    code, report, _ = run_cli(["ode-demo", "--x0", "2", "--interval", "-1", "1", "--grid", "0.01"], tmp_path)
    assert code == EXIT_OK and report["result"]["expected_kernel_dim"] == 1


def test_solve_linear_with_csv(tmp_path):
    dump = tmp_path / "nodes.csv"
    code, report, _ = run_cli(["solve-linear", "--dx", "0.05", "--csv", str(dump)], tmp_path)
    assert code == EXIT_OK
    rows = list(csv.DictReader(dump.open()))
    assert len(rows) == report["result"]["grids"][0]["grid"]["nodes"]
    assert all(abs(float(r["v"]) - float(r["x1"]) * float(r["x2"])) < 1e-10 for r in rows)


def test_extend_and_nash_moser(tmp_path):
    assert run_cli(["extend"], tmp_path)[0] == EXIT_OK
    code, report, _ = run_cli(["nash-moser"], tmp_path)
    assert code == EXIT_OK and report["result"]["iteration"]["converged"] is True
    code, report, _ = run_cli(["nash-moser", "--amplitude", "1.0"], tmp_path)
    assert code == EXIT_INPUT


def test_gauss_solve_and_normal_form(tmp_path):
    code, report, _ = run_cli(["gauss-solve", "--rhat", "1", "0", "0", "0", "0", "0", "0", "0", "0"], tmp_path)
    assert code == EXIT_OK and float(report["result"]["sff"]["sigma"]) < 0
    assert main(["gauss-solve", "--rhat", "1", "0", "0", "0", "0", "0", "0", "0", "0", "--sigma", "0.3"]) == EXIT_INPUT
    code, report, _ = run_cli(["normal-form", "--n", "3", "--sigma", "0.3"], tmp_path)
    assert code == EXIT_OK and len(report["result"]["signature_sweep"]) == 5


def test_stdout_when_no_output(capsys):
    assert main(["rank-check"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["command"] == "rank-check"
