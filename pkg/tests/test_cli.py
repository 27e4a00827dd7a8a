import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from modlab.cli import read_csv_config, load_config, resolve_config, run
from modlab.errors import ConfigError

GOLDEN = Path(__file__).parent / "golden"

#: cheap invocations of every subcommand
CHEAP = {
    "modulus": ["--curves", "40", "--grid", "32"],
    "dilatation": ["--points", "[[0.25, 0, 0], [0, 0.5, 0]]"],
    "criteria": ["--kind", "divergence", "--q", "1", "--decades", "5"],
    "catalog": ["--list"],
    "verify-ring": ["--curves", "41", "--grid", "32", "--resolution", "64"],
    "probe-limit": ["--directions", "8"],
}


def invoke(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def table(text):
    """Output without the trailing one-line summary."""
    return text.rsplit("\n", 2)[0] + "\n"


# -- config loading ---------------------------------------------------------------------

def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_minimal_modulus_defaults(tmp_path):
    cfg = load_config(write(tmp_path, {"subcommand": "modulus"}))
    assert cfg["grid"] == 256 and cfg["curves"] == 400
    assert cfg["tol"] == 1e-3 and cfg["seed"] == 0
    assert cfg["domain"] == {"kind": "annulus", "center": [0.0, 0.0], "r1": 1.0, "r2": np.e}


def test_p_equal_one_rejected(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(write(tmp_path, {"subcommand": "modulus", "p": 1}))
    assert info.value.path == "/p" and "p > 1 required" in info.value.message


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(write(tmp_path, {"subcommand": "modulus", "foo": 1}))
    assert info.value.path == "/foo"


@pytest.mark.parametrize("doc,path", [
    ({"subcommand": "modulus", "domain": {"kind": "annulus", "r1": 2, "r2": 1}}, "/domain/r2"),
    ({"subcommand": "modulus", "domain": {"radius": 1}}, "/domain/radius"),
    ({"subcommand": "modulus", "grid": 0}, "/grid"),
    ({"subcommand": "modulus", "metric": {"conformal": "import os"}}, "/metric/conformal"),
    ({"subcommand": "criteria", "kind": "divergence"}, "/q"),
    ({"subcommand": "criteria", "kind": "fmo", "Q": "x +"}, "/Q"),
    ({"subcommand": "dilatation", "map": {"catalog": "nope"}}, "/map/catalog"),
    ({"subcommand": "dilatation", "map": {"catalog": "twisting", "params": {"z": 1}}},
     "/map/params/z"),
    ({"subcommand": "probe-limit", "radii": [1e-2, 1e-1, 1e-3]}, "/radii"),
    ({"subcommand": "nope"}, "/subcommand"),
    ({}, "/subcommand"),
])
def test_config_error_paths(doc, path):
    with pytest.raises(ConfigError) as info:
        resolve_config(doc)
    assert info.value.path == path


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


# -- run --------------------------------------------------------------------------------------

@pytest.mark.parametrize("sub", sorted(CHEAP))
def test_csv_schema_is_stable(sub):
    code, out, _ = invoke(sub, *CHEAP[sub])
    assert code == 0
    lines = out.splitlines()
    golden = (GOLDEN / f"{sub}.header").read_text().splitlines()
    assert lines[0] == golden[0]
    assert lines[1].startswith("# config: ")
    assert lines[2] == golden[1]
    assert len(lines[-1].split("\n")) == 1 and lines[-1].startswith(sub)


def test_catalog_listing_golden():
    code, out, _ = invoke("catalog", "--list")
    assert code == 0
    assert table(out) == (GOLDEN / "catalog_list.csv").read_text()
    assert out.splitlines()[-1] == "catalog entries=6"


@pytest.mark.parametrize("sub", sorted(CHEAP))
def test_round_trip_from_embedded_config(sub, tmp_path):
    _, first, _ = invoke(sub, *CHEAP[sub])
    cfg = write(tmp_path, read_csv_config(first))
    _, second, _ = invoke(sub, "--config", str(cfg))
    assert second == first


def test_json_output_embeds_config(tmp_path):
    code, out, _ = invoke("criteria", "--kind", "divergence", "--q", "pow(log(e/t),2)", "--n", "2",
                          "--p", "2", "--format", "json")
    assert code == 0
    doc = json.loads(table(out))
    assert doc["summary"]["verdict"] == "CONVERGES"
    assert doc["config"]["q"] == "pow(log(e/t),2)" and doc["config"]["decades"] == 100
    assert len(doc["rows"]) == 100
    assert out.splitlines()[-1] == "criteria verdict=CONVERGES"


def test_ring_modulus_run(tmp_path):
    cfg = write(tmp_path, {"subcommand": "modulus",
                           "domain": {"kind": "annulus", "center": [0, 0], "r1": 1, "r2": np.e},
                           "p": 2, "grid": 256}, "ring_p2.json")
    out_csv = tmp_path / "out.csv"
    code, out, _ = invoke("modulus", "--config", str(cfg), "--output", json.dumps(str(out_csv)))
    assert code == 0 and out.count("\n") == 1
    rows = out_csv.read_text().splitlines()
    header, row = rows[2].split(","), rows[3].split(",")
    rec = dict(zip(header, row))
    assert float(rec["estimate"]) == pytest.approx(6.283, abs=0.01)
    assert float(rec["reference"]) == pytest.approx(6.28319, abs=1e-5)
    assert float(rec["rel_err"]) < 0.05


def test_blowup_dilatation_row():
    code, out, _ = invoke("dilatation", "--points", "[[0.25, 0, 0]]", "--p", "3")
    assert code == 0
    header, row = out.splitlines()[2:4]
    rec = dict(zip(header.split(","), row.split(",")))
    assert float(rec["K_I"]) == 36.0 and rec["finite_distortion"] == "true"


def test_config_error_exit_code():
    code, out, err = invoke("modulus", "--p", "1")
    assert code == 2 and out == ""
    assert json.loads(err) == {"error": "ConfigError", "path": "/p", "message": "p > 1 required"}


def test_numerical_error_exit_code():
    code, _, err = invoke("dilatation", "--points", "[[0, 0, 0]]")
    assert code == 3
    payload = json.loads(err)
    assert payload["error"] == "NumericalError" and payload["path"] == "/points/0"


def test_no_convergence_exit_code():
    code, _, err = invoke("modulus", "--curves", "30", "--jitter", "0.3", "--grid", "16",
                          "--max-iter", "1", "--tol", "1e-12")
    assert code == 3 and json.loads(err)["path"] == "/max_iter"


def test_missing_config_file():
    code, _, err = invoke("modulus", "--config", "/nonexistent/cfg.json")
    assert code == 2 and json.loads(err)["error"] == "ConfigError"


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "modlab", "catalog", "--list"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[-1] == "catalog entries=6"


def test_thread_cap_does_not_change_output(monkeypatch):
    monkeypatch.setenv("MODLAB_THREADS", "1")
    _, a, _ = invoke("modulus", *CHEAP["modulus"], "--jitter", "0.2")
    monkeypatch.setenv("MODLAB_THREADS", "3")
    _, b, _ = invoke("modulus", *CHEAP["modulus"], "--jitter", "0.2")
    assert a == b
