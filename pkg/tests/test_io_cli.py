import json
import subprocess
import sys

import numpy as np
import pytest

from rating_forge import cli
from rating_forge import io as rio
from rating_forge.errors import InternalError, ValidationError

TWO_TYPES = {"grid": {"nodes": [1.0, 2.0], "weights": [0.5, 0.5]},
             "cost": {"family": "quadratic", "params": {}}}


def _write(tmp_path, obj, name="inst.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


# ---------------------------------------------------------------------- io


def test_dumps_is_canonical():
    text = rio.dumps({"b": [1.0, 0.1], "a": {"z": np.float64(1 / 3), "y": np.nan}})
    assert text.splitlines()[1].startswith('  "a"')
    assert "0.33333333333333331" in text
    assert "null" in text
    assert text.endswith("\n")


def test_instance_round_trip():
    inst = rio.reference_instance("mid")
    text = inst.dumps()
    again = rio.parse_instance(rio.loads(text))
    assert again.dumps() == text


def test_unknown_field_rejected():
    bad = dict(TWO_TYPES, grid={"nodes": [1.0, 2.0], "weights": [0.5, 0.5], "foo": 1})
    with pytest.raises(ValidationError, match="unknown field 'foo' in 'grid'"):
        rio.parse_instance(bad)
    with pytest.raises(ValidationError, match="unknown field 'extra' in 'instance'"):
        rio.parse_instance(dict(TWO_TYPES, extra=1))


def test_malformed_json_location():
    with pytest.raises(ValidationError, match="line 2, column"):
        rio.loads('{\n  "grid": ,\n}')


def test_schedule_length_checked():
    bad = dict(TWO_TYPES, schedules={"q": [1.0], "qbar": [1.0]})
    with pytest.raises(ValidationError, match="2 entries"):
        rio.parse_instance(bad)


def test_write_csv(tmp_path):
    p = tmp_path / "out.csv"
    rio.write_csv(str(p), ("a", "b"), [(0.1, "x"), (2, "y")])
    assert p.read_text() == "a,b\n0.10000000000000001,x\n2,y\n"


# --------------------------------------------------------------------- cli


def test_malformed_instance_exits_2(tmp_path, capsys):
    path = _write(tmp_path, '{"grid": [1, }')
    code, _, err = _run(["verify", "-i", path], capsys)
    assert code == 2
    assert "malformed JSON at line 1" in err


def test_construct_not_majorized_exits_2(tmp_path, capsys):
    path = _write(tmp_path, dict(TWO_TYPES, schedules={"q": [1.0, 2.0], "qbar": [0.8, 2.2]}))
    code, _, err = _run(["construct", "-i", path], capsys)
    assert code == 2
    assert "partial sum 0" in err


def test_construct_outputs_trace(tmp_path, capsys):
    path = _write(tmp_path, dict(TWO_TYPES, schedules={"q": [1.0, 2.0], "qbar": [1.25, 1.75]}))
    plot = tmp_path / "trace.csv"
    code, out, _ = _run(["construct", "-i", path, "--plot", str(plot)], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["residual"] < 1e-12
    assert plot.read_text().splitlines()[0] == "step,kind,k,l,lambda"


def test_verify_reports(tmp_path, capsys):
    path = _write(tmp_path, dict(TWO_TYPES, schedules={"q": [1.0, 2.0], "qbar": [1.0, 1.2]}))
    code, out, _ = _run(["verify", "-i", path], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["pass"] is False
    assert doc["ic"]["worst"] == {"type": 1, "mimics": 0, "gain": pytest.approx(0.55)}


def test_solve_plot_and_determinism(tmp_path, capsys):
    plot = tmp_path / "solve.csv"
    code, first, _ = _run(["solve", "--objective", "low", "--plot", str(plot)], capsys)
    assert code == 0
    doc = json.loads(first)
    assert doc["verify"]["pass"] is True
    assert doc["objective"] == pytest.approx(0.676528760774991, abs=1e-12)
    lines = plot.read_text().splitlines()
    assert lines[0] == "theta,f,lambda,q,qbar,profit"
    assert len(lines) == 401
    _, second, _ = _run(["solve", "--objective", "low"], capsys)
    assert first == second


def test_solve_needs_weights(tmp_path, capsys):
    path = _write(tmp_path, dict(TWO_TYPES, objective="low"))
    code, _, err = _run(["solve", "-i", path], capsys)
    assert code == 2
    assert "weights" in err


def test_out_file(tmp_path, capsys):
    out = tmp_path / "res.json"
    code, stdout, _ = _run(["solve", "--objective", "total", "--out", str(out)], capsys)
    assert code == 0 and stdout == ""
    assert json.loads(out.read_text())["regime"] == "total"


def test_check_reports_cost(capsys):
    code, out, _ = _run(["check"], capsys)
    assert code == 0
    assert json.loads(out)["cost"]["pass"] is True


def test_eval_matches_solver(tmp_path, capsys):
    _, sol, _ = _run(["solve", "--objective", "high"], capsys)
    doc = json.loads(sol)
    inst = rio.reference_instance("high").to_dict()
    inst["schedules"] = {"q": doc["q"], "qbar": doc["qbar"]}
    path = _write(tmp_path, inst)
    code, out, _ = _run(["eval", "-i", path], capsys)
    assert code == 0
    assert json.loads(out)["objective"] == pytest.approx(doc["objective"], abs=1e-12)


def test_internal_error_exits_3(monkeypatch, capsys):
    def boom(args):
        raise InternalError("forced")

    monkeypatch.setitem(cli.COMMANDS, "verify", (boom, "forced"))
    code, _, err = _run(["verify"], capsys)
    assert code == 3
    assert "internal error: forced" in err


def test_module_entry_point(tmp_path):
    path = _write(tmp_path, dict(TWO_TYPES, schedules={"q": [1.0, 2.0], "qbar": [1.0, 2.0]}))
    proc = subprocess.run([sys.executable, "-m", "rating_forge.cli", "verify", "-i", path],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["pass"] is True
