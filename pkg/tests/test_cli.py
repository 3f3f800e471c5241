from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import pytest

from teichlab import cli

SCHEMAS = Path(__file__).resolve().parents[1] / "docs" / "schemas"
BUNDLED = {
    "pants-solve": "pants_solve.json",
    "loop-length": "figure_eight_length.json",
    "resolve": "resolve.json",
    "okai-check": "okai_check.json",
    "ray": "torus_dual_ray.json",
    "density": "figure_eight_density.json",
    "expect": "figure_eight_expect.json",
}


def run(capsys, *argv):
    status = cli.main(list(argv))
    out, err = capsys.readouterr()
    return status, out, err


@pytest.mark.parametrize("command,name", sorted(BUNDLED.items()))
def test_bundled_configs_run(capsys, command, name):
    status, out, err = run(capsys, command, "--config", f"bundled:{name}", "--samples", "20000")
    assert status == 0, err
    if command != "density":
        assert json.loads(out)["command"] == command


def test_bundled_counts(capsys):
    status, out, _ = run(capsys, "count", "--config", "bundled:square_torus_count.json")
    assert status == 0
    rows = [line.split(",") for line in out.splitlines()]
    assert rows[0] == ["a", "N"] and len(rows) == 7
    counts = [int(r[1]) for r in rows[1:]]
    assert counts == sorted(counts) and counts[-1] > 0

    status, out, _ = run(capsys, "count", "--config", "bundled:figure_eight_count.json", "--samples", "20000")
    assert status == 0
    rows = out.splitlines()
    assert rows[0] == "a,Q,stderr" and len(rows) == 4


def test_density_starts_at_systole_bin(capsys):
    status, out, _ = run(capsys, "density", "--config", "bundled:figure_eight_density.json")
    assert status == 0
    rows = [line.split(",") for line in out.splitlines() if line and not line[0].isalpha()]
    first = next(r for r in rows if float(r[2]) > 0)
    assert float(first[0]) == pytest.approx(3.5) and float(first[1]) == pytest.approx(3.6)


@pytest.mark.slow
def test_bundled_fr_fit(capsys):
    status, out, err = run(capsys, "fr-fit", "--config", "bundled:figure_eight_fr.json")
    assert status == 0, err
    body = json.loads(out)
    assert body["boundCheck"] is True


def test_selftest(capsys):
    status, out, _ = run(capsys, "selftest")
    body = json.loads(out)
    assert status == 0 and body["passed"] is True and body["properties"]


def write(tmp_path, text, name="cfg.json"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_trailing_comma_reports_location(capsys, tmp_path):
    path = write(tmp_path, '{\n  "lengths": [[1, 1, 1]],\n}\n')
    status, out, err = run(capsys, "pants-solve", "--config", path)
    e = json.loads(err)
    assert status == 2 and out == ""
    assert e["exitStatus"] == 2 and e["line"] == 3 and e["column"] == 1


def test_unknown_field_rejected(capsys, tmp_path):
    path = write(tmp_path, json.dumps({"lengths": [[1, 1, 1]], "lenghts": 1}))
    status, _, err = run(capsys, "pants-solve", "--config", path)
    assert status == 2 and json.loads(err)["field"] == "config.lenghts"


@pytest.mark.parametrize(
    "argv",
    [
        ["pants-solve"],
        ["pants-solve", "--config", "/nonexistent.json"],
        ["pants-solve", "--config", "bundled:nope.json"],
        ["bogus", "--config", "x"],
        ["ray", "--config", "bundled:resolve.json"],
        ["pants-solve", "--config", "bundled:pants_solve.json", "--samples", "0"],
    ],
)
def test_validation_errors_exit_two(capsys, argv):
    status, _, err = run(capsys, *argv)
    assert status == 2 and json.loads(err)["exitStatus"] == 2


def test_failed_check_exits_three(capsys, tmp_path):
    path = write(tmp_path, json.dumps({"ellA": [1.0], "tau": [0.5], "L": [0.0], "tolerance": -1.0}))
    status, out, err = run(capsys, "okai-check", "--config", path)
    assert status == 3 and json.loads(out)["passed"] is False
    assert json.loads(err)["exitStatus"] == 3


def test_output_is_deterministic(capsys, tmp_path):
    a = run(capsys, "density", "--config", "bundled:figure_eight_density.json", "--samples", "5000", "--seed", "7")[1]
    b = run(capsys, "density", "--config", "bundled:figure_eight_density.json", "--samples", "5000", "--seed", "7")[1]
    c = run(capsys, "density", "--config", "bundled:figure_eight_density.json", "--samples", "5000", "--seed", "8")[1]
    assert a == b and a != c


def test_output_dir_env(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path))
    status, out, _ = run(capsys, "pants-solve", "--config", "bundled:pants_solve.json", "--out", "sub/p.json")
    assert status == 0 and out == ""
    assert json.loads((tmp_path / "sub" / "p.json").read_text())["command"] == "pants-solve"
    assert cli.resolve_out("/abs/x.json") == Path("/abs/x.json")
    assert cli.resolve_out("-") is None


def test_fr_fit_reads_density_artifact(capsys, tmp_path):
    dens = {"expectation": {"analytic": "figureEight"}, "grid": {"min": 0.0, "max": 12.0, "binWidth": 0.25},
            "format": "json", "samples": 20000}
    status, out, _ = run(capsys, "density", "--config", write(tmp_path, json.dumps(dens)))
    assert status == 0
    art = tmp_path / "d.json"
    art.write_text(out)
    cfg = {"density": str(art), "maxDegree": 2, "fitWindow": [8.0, 12.0]}
    status, out, _ = run(capsys, "fr-fit", "--config", write(tmp_path, json.dumps(cfg), "fr.json"))
    body = json.loads(out)
    assert status == (0 if body["boundCheck"] else 3)
    assert body["fitWindow"] == [8.0, 12.0] and body["degree"] <= 2


def test_bundled_configs_match_schemas():
    jsonschema = pytest.importorskip("jsonschema")
    commands = {**BUNDLED, "fr-fit": "figure_eight_fr.json", "count": "square_torus_count.json"}
    for command, name in commands.items():
        schema = json.loads((SCHEMAS / f"{command}.schema.json").read_text())
        cfg = json.loads((resources.files("teichlab.data") / name).read_text())
        jsonschema.validate(cfg, schema)


def test_artifacts_match_output_envelope(capsys):
    jsonschema = pytest.importorskip("jsonschema")
    schema = json.loads((SCHEMAS / "output.schema.json").read_text())
    for command, name in BUNDLED.items():
        if command == "density":
            continue
        _, out, _ = run(capsys, command, "--config", f"bundled:{name}", "--samples", "5000")
        jsonschema.validate(json.loads(out), schema)
    err_schema = json.loads((SCHEMAS / "error.schema.json").read_text())
    _, _, err = run(capsys, "pants-solve")
    jsonschema.validate(json.loads(err), err_schema)
