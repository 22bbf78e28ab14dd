import csv
import json
from fractions import Fraction

import pytest

from fracbiot import cli
from fracbiot.config import ConfigError, load_config, normalize, parse_config

NEUTRAL = {
    "exponents": {"coupling_active": True, "nu_C": "1", "nu_K": "0"},
    "discretization": {"h": 0.125, "dt": 0.05, "T": 0.2},
    "epsilon": 0.25,
    "sweep": {"eps": [0.5, 0.25, 0.125]},
}


def _write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return str(path)


def _run(tmp_path, command, data, *extra):
    out = tmp_path / f"out_{command}"
    code = cli.main([command, _write(tmp_path, data), "--out", str(out), *extra])
    return code, out


def test_sweep_writes_report(tmp_path, capsys):
    code, out = _run(tmp_path, "sweep", NEUTRAL)
    assert code == 0
    rows = list(csv.reader((out / "report.csv").open()))
    assert rows[0] == ["epsilon", "norm_name", "value"]
    assert {float(r[0]) for r in rows[1:]} == {0.5, 0.25, 0.125}
    verdicts = (out / "verdicts.txt").read_text()
    assert "PASS" in verdicts and "FAIL" not in verdicts
    assert "PASS" in capsys.readouterr().out


def test_inadmissible_exponents_name_the_clause(tmp_path, capsys):
    bad = dict(NEUTRAL, exponents={"coupling_active": True, "nu_C": "1", "nu_K": "0", "nu_omega": "-2"})
    code, _ = _run(tmp_path, "check", bad)
    assert code == 1
    assert "3.5(i)" in capsys.readouterr().err


def test_check_reports_regime(tmp_path, capsys):
    code, out = _run(tmp_path, "check", NEUTRAL)
    assert code == 0
    regime = json.loads((out / "regime.json").read_text())
    assert regime["mech"] == "Soft" and regime["flow"] == "Neutral"
    assert "admissible: Soft/Neutral" in capsys.readouterr().out


def test_effective_csv_columns(tmp_path):
    code, out = _run(tmp_path, "effective", NEUTRAL)
    assert code == 0
    with (out / "effective.csv").open() as fh:
        header = next(csv.reader(fh))
        n_rows = sum(1 for _ in fh)
    assert header[0] == "y"
    assert any(h.startswith("C_gamma_N") for h in header) and any(h.startswith("K_gamma") for h in header)
    assert n_rows == 9


@pytest.mark.parametrize("command", ["solve-full", "solve-limit"])
def test_solvers_dump_solution(tmp_path, command):
    code, out = _run(tmp_path, command, NEUTRAL)
    assert code == 0
    manifest = json.loads((out / "solution" / "manifest.json").read_text())
    assert len(manifest["files"]) == 5
    energy = list(csv.reader((out / "energy.csv").open()))
    assert energy[0] == ["time", "energy"] and len(energy) == 6
    assert (out / "mesh.txt").exists()


def test_mesh_dump(tmp_path):
    code, out = _run(tmp_path, "mesh-dump", NEUTRAL)
    assert code == 0 and (out / "mesh.txt").read_text().startswith("# vertices")


def test_usage_and_input_errors(tmp_path):
    assert cli.main(["frobnicate", _write(tmp_path, NEUTRAL)]) == 1
    assert cli.main(["check", _write(tmp_path, "{not json", "bad.json")]) == 1
    assert cli.main(["check", str(tmp_path / "missing.json")]) == 1
    assert cli.main(["check", _write(tmp_path, {"exponents": {"nu_C": 1.0}}, "f.json")]) == 1


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    def boom(*_a, **_k):
        raise RuntimeError("factorization failed")

    monkeypatch.setattr(cli, "solve_transient", boom)
    code, _ = _run(tmp_path, "solve-full", NEUTRAL)
    assert code == 2


def test_config_echo_round_trip(tmp_path):
    code, out = _run(tmp_path, "check", NEUTRAL)
    echoed = json.loads((out / "config.json").read_text())
    assert normalize(echoed) == echoed
    assert echoed["exponents"]["nu_omega"] == "-1"
    assert parse_config(echoed).to_json() == parse_config(NEUTRAL).to_json()


def test_exponent_strings_stay_exact():
    cfg = parse_config({"exponents": {"coupling_active": True, "nu_C": "1", "nu_K": "-1/3"}})
    assert cfg.exponents.nu_K == Fraction(-1, 3)
    assert json.loads(cfg.to_json())["exponents"]["nu_K"] == "-1/3"


def test_float_echo_is_exact():
    cfg = parse_config(dict(NEUTRAL, epsilon=0.1 + 0.2))
    assert json.loads(cfg.to_json())["epsilon"] == 0.1 + 0.2


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
    with pytest.raises(ConfigError):
        parse_config({"exponents": {"coupling_active": True, "nu_C": "1", "nu_K": "0"}, "unknown": 1})
