from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from fujita_lab import cli
from fujita_lab.config import SCHEMA, effective_threads, materialize
from fujita_lab.errors import ValidationError

PLANE = {"builtin": "euclidean", "dimension": 2}

CONFIGS = {
    "classify": {"manifold": PLANE, "problem": {"p": 2.0}},
    "simulate": {"manifold": {"builtin": "euclidean", "dimension": 1},
                 "problem": {"p": 2.0, "u0": {"kind": "bump", "amplitude": 0.1}}},
    "sweep": {"manifold": {"builtin": "euclidean", "dimension": 1},
              "sweep": {"p_lo": 2.6, "p_hi": 3.4, "width": 0.4}},
    "heat-kernel": {"manifold": PLANE, "heat_kernel": {"N": 256}},
    "picard": {"manifold": PLANE, "problem": {"p": 3.0},
               "picard": {"J": 24, "pairs": 20, "write_field": True}},
    "certificate": {"manifold": PLANE, "problem": {"p": 2.0}, "certificate": {"i": 6, "i_list": [4, 6]}},
}


def _run(tmp_path, command, cfg, *extra):
    path = tmp_path / f"{command}.json"
    path.write_text(json.dumps(cfg))
    return cli.run([command, "--config", str(path), "--out", str(tmp_path / "out"), *extra])


def _snapshot(directory):
    return {f.name: f.read_bytes() for f in sorted(directory.iterdir()) if f.suffix in (".csv", ".json", ".svg")}


def test_classify_exit_codes(tmp_path, capsys):
    assert _run(tmp_path, "classify", CONFIGS["classify"]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "Divergent"
    cfg = {"manifold": PLANE, "problem": {"p": 3.0}}
    assert _run(tmp_path, "classify", cfg) == 1


def test_numeric_route(tmp_path, capsys):
    cfg = {"manifold": {"builtin": "power-4", "dimension": 2}, "problem": {"p": 1.4},
           "criterion": {"numeric": True}}
    assert _run(tmp_path, "classify", cfg) == 0
    assert json.loads(capsys.readouterr().out)["route"] == "numeric"


@pytest.mark.parametrize("command", sorted(CONFIGS))
def test_commands_are_byte_deterministic(tmp_path, command):
    assert _run(tmp_path, command, CONFIGS[command], "--seed", "3") in (0, 1)
    first = _snapshot(tmp_path / "out")
    assert _run(tmp_path, command, CONFIGS[command], "--seed", "3") in (0, 1)
    assert _snapshot(tmp_path / "out") == first
    manifest = json.loads(first["manifest.json"])
    assert "timestamp" not in json.dumps(manifest)
    assert set(manifest["outputs"]) <= set(first)


def test_report_writes_svg(tmp_path):
    assert _run(tmp_path, "sweep", CONFIGS["sweep"]) == 0
    cfg = {"manifold": PLANE, "report": {"inputs": [str(tmp_path / "out" / "sweep.csv")]}}
    assert _run(tmp_path, "report", cfg) == 0
    svg = (tmp_path / "out" / "phase_diagram.svg").read_text()
    assert svg.startswith("<svg") and "circle" in svg


def test_format_filter(tmp_path):
    assert _run(tmp_path, "heat-kernel", CONFIGS["heat-kernel"], "--format", "json") == 0
    names = {f.name for f in (tmp_path / "out").iterdir()}
    assert "heat_kernel.json" in names and "heat_kernel.csv" not in names


def test_validation_errors(tmp_path, capsys):
    assert cli.run(["classify", "--config", str(tmp_path / "missing.json")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["error"] == "validation_error"
    assert _run(tmp_path, "classify", {"manifold": PLANE, "problem": {"p": 2.0}, "bogus": 1}) == 2
    assert _run(tmp_path, "classify", {"manifold": PLANE}) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.run(["classify", "--config", str(bad)]) == 2
    assert cli.run(["no-such-command"]) == 2


def test_budget_exhausted_exit_code(tmp_path):
    cfg = {"manifold": {"builtin": "euclidean", "dimension": 1},
           "sweep": {"p_lo": 2.0, "p_hi": 4.0, "budget": 8}}
    assert _run(tmp_path, "sweep", cfg) == 4


def test_defaults_are_materialized():
    cfg = materialize({"manifold": PLANE})
    assert cfg["solver"]["N"] == 960
    assert cfg["sweep"]["amplitudes"] == [1e-4, 1e-2, 1.0]
    assert cfg["seed"] == 0


def test_threads_precedence():
    cfg = {"threads": 3}
    assert effective_threads(5, cfg, {"FUJITA_LAB_THREADS": "2"}) == 5
    assert effective_threads(None, cfg, {"FUJITA_LAB_THREADS": "2"}) == 2
    assert effective_threads(None, cfg, {}) == 3
    with pytest.raises(ValidationError):
        effective_threads(None, cfg, {"FUJITA_LAB_THREADS": "many"})


@given(st.sampled_from(sorted(k for k in SCHEMA["properties"] if k not in ("seed", "threads", "manifold"))),
       st.text(alphabet="abcdefghijklmnopqrstuvwxyz_", min_size=3, max_size=12))
def test_schema_rejects_unknown_keys(section, key):
    props = SCHEMA["properties"][section]["properties"]
    if key in props:
        return
    with pytest.raises(ValidationError):
        materialize({"manifold": PLANE, section: {key: 1}})
