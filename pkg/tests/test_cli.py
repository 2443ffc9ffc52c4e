import csv
import io
import json
import math

import pytest

from tetrablock import cli


def run(argv):
    buf = io.StringIO()
    code = cli.main(argv, out=buf)
    return code, buf.getvalue()


def write_problem(tmp_path, name="problem.json", **fields):
    path = tmp_path / name
    path.write_text(json.dumps(fields))
    return str(path)


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_geometry_triple():
    code, text = run(["geometry", "1", "1", "1"])
    rec = json.loads(text)
    assert code == 0
    assert rec["schema_version"] == cli.SCHEMA_VERSION
    assert rec["kind"] == "triple"
    assert max(abs(k) for k in rec["curvatures"][3:]) < 1e-10


def test_geometry_double_and_single():
    assert json.loads(run(["geometry", "1", "1", "0"])[1])["kind"] == "double"
    rec = json.loads(run(["geometry", "1", "0", "0"])[1])
    assert rec["kind"] == "single"
    assert rec["perimeter"] == pytest.approx(2 * math.sqrt(math.pi), rel=1e-14)


def test_geometry_bad_input():
    assert run(["geometry", "0", "0", "0"])[0] == 3
    assert run(["geometry", "1", "x", "1"])[0] == 3


def test_e0_command():
    code, text = run(["e0", str(4 * math.pi), "0", "0", "--gamma", "1", "1", "1"])
    assert code == 0
    assert json.loads(text)["e0"] == pytest.approx(8 * math.pi, rel=1e-14)
    assert run(["e0", "1", "1", "1", "--gamma", "1", "2"])[0] == 3


def test_minimize_five_singles(tmp_path):
    pf = write_problem(tmp_path, M=[40, 0, 0], Gamma=[[1, 0, 0], [0, 1, 0], [0, 0, 1]], seed=0)
    code, text = run(["minimize", "--input", pf])
    rec = json.loads(text)
    assert code == 0
    assert rec["signature"] == "5S1"
    assert [b["m1"] for b in rec["bubbles"]] == pytest.approx([8.0] * 5, rel=1e-10)


def test_minimize_zero_gamma_csv(tmp_path):
    pf = write_problem(tmp_path, M=[1, 1, 1], Gamma=[[0] * 3] * 3, count_cap=2)
    out = tmp_path / "table.csv"
    code, _ = run(["minimize", "--input", pf, "--seed", "1", "--out", str(out)])
    rows = read_csv(out.read_text())
    assert code == 0
    assert len(rows) == 1 and rows[0]["kind"] == "Triple"
    assert rows[0]["schema_version"] == str(cli.SCHEMA_VERSION)


def test_minimize_deterministic(tmp_path):
    pf = write_problem(tmp_path, M=[3, 2, 1], Gamma=[[1, 0, 0], [0, 2, 0], [0, 0, 0.5]], seed=4)
    assert run(["minimize", "--input", pf])[1] == run(["minimize", "--input", pf])[1]


@pytest.mark.parametrize("fields", [
    {"M": [1, 1, 1], "Gamma": [[1, 2, 0], [0, 1, 0], [0, 0, 1]], "seed": 0},
    {"M": [1, 1], "Gamma": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "seed": 0},
    {"M": [1, 1, 1], "Gamma": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "seed": 0, "extra": 1},
    {"M": [1, 1, 1], "Gamma": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]},
])
def test_minimize_rejects(tmp_path, fields):
    pf = write_problem(tmp_path, **fields)
    assert run(["minimize", "--input", pf])[0] == 3


def test_missing_file(tmp_path):
    assert run(["minimize", "--input", str(tmp_path / "nope.json"), "--seed", "0"])[0] == 3


def test_coexist_params_only():
    code, text = run(["coexist", "2", "2", "2", "--no-verify"])
    rec = json.loads(text)
    assert code == 0
    assert rec["certificate"]["construction"]["holds"]
    assert "verification" not in rec
    assert run(["coexist", "0", "1", "1"])[0] == 3


def test_place_two_bubbles(tmp_path):
    pf = write_problem(tmp_path, Gamma=[[1, 0, 0], [0, 1, 0], [0, 0, 1]],
                       configuration=[[1, 1, 1], [0, 0, 2]])
    code, text = run(["place", "--input", pf])
    rows = read_csv(text)
    assert code == 0 and len(rows) == 2
    assert float(rows[0]["min_distance"]) >= 0.25


def test_eta_check(tmp_path):
    pf = write_problem(tmp_path, Gamma=[[1, 0, 0], [0, 1, 0], [0, 0, 1]],
                       configuration=[[1, 1, 1], [0, 0, 2]], positions=[[0, 0], [0.5, 0.5]],
                       eta=[1e-2, 1e-3])
    code, text = run(["eta-check", "--input", pf])
    rows = read_csv(text)
    assert code == 0 and len(rows) == 2
    scaled = [float(r["scaled_remainder"]) for r in rows]
    assert scaled[1] <= 1.1 * scaled[0]


def test_eta_check_overlap_is_input_error(tmp_path):
    pf = write_problem(tmp_path, Gamma=[[1, 0, 0], [0, 1, 0], [0, 0, 1]],
                       configuration=[[1, 1, 1], [0, 0, 2]], positions=[[0, 0], [0.01, 0]],
                       eta=[0.5])
    assert run(["eta-check", "--input", pf])[0] == 3


def test_greens(tmp_path):
    out = tmp_path / "g.csv"
    code, text = run(["greens", "--grid", "8", "--out", str(out)])
    assert code == 0
    assert len(read_csv(out.read_text())) == 64
    assert "zero-mean check" in text
    mean = float(text.split(":")[1].split()[0])
    assert abs(mean) < 1e-6


def test_greens_unreachable_tolerance():
    assert run(["greens", "--grid", "2", "--tol", "1e-20"])[0] == 2
