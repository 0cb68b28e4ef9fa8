import json
import os

import jsonschema
import pytest

from randwave import cli

SMALL_TAILS = """
[datum]
K_max = 2
seed = 3

[norm]
T = 1.0
nt = 3

[tails]
trials = 8
n_lambda = 6
"""


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _schema():
    return json.loads(cli.schema_path().read_text())


# --------------------------------------------------------------------------- configuration

def test_empty_config_is_all_defaults():
    cfg = cli.parse_config({})
    assert set(cfg.provenance.values()) == {"default"}
    assert cfg.values["tails"]["trials"] == 2000
    assert cfg.values["norm"]["q"] == 6.0


def test_provenance_and_echo_round_trip():
    cfg = cli.parse_config({"tails": {"trials": 10}}, {"run.seed": 4})
    assert cfg.provenance["tails.trials"] == "file"
    assert cfg.provenance["run.seed"] == "flag"
    assert cfg.provenance["norm.q"] == "default"
    back = cli.parse_echo(json.loads(json.dumps(cfg.echo())))
    assert back.values == cfg.values and back.provenance == cfg.provenance


@pytest.mark.parametrize("text,needle", [
    ("[fwm]\nalpha = 0.3\n", "fwm.alpha"),
    ("[cover]\nmu = 0.0\n", "cover.mu"),
    ("[tails]\ntrailz = 3\n", "unknown key"),
    ("[nonsense]\nx = 1\n", "unknown section"),
    ("[tails\n", "malformed"),
])
def test_config_rejections(tmp_path, capsys, text, needle):
    path = _write(tmp_path, "bad.toml", text)
    assert cli.dispatch(["compare", "--config", path, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_unknown_subcommand_and_missing_file(tmp_path):
    assert cli.dispatch(["levitate"]) == cli.EXIT_CONFIG
    assert cli.dispatch(["compare", "--config", str(tmp_path / "nope.toml")]) == cli.EXIT_CONFIG


# --------------------------------------------------------------------------- runs and reports

def test_selfcheck_quick(tmp_path):
    out = tmp_path / "sc"
    assert cli.dispatch(["selfcheck", "--quick", "--out", str(out)]) == cli.EXIT_OK
    doc = json.loads((out / "selfcheck.json").read_text())
    jsonschema.validate(doc, _schema())
    assert doc["passed"] and all(c["pass"] for c in doc["results"]["checks"])


def test_compare_report(tmp_path):
    out = tmp_path / "cmp"
    assert cli.dispatch(["compare", "--out", str(out)]) == cli.EXIT_OK
    doc = json.loads((out / "compare.json").read_text())
    jsonschema.validate(doc, _schema())
    lines = (out / "compare.csv").read_text().splitlines()
    assert lines[0].startswith("n,kt,kt_linf")
    assert len(lines) == 1 + len(doc["results"]["table"])


def test_tails_reruns_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, "t.toml", SMALL_TAILS)
    a, b = tmp_path / "w1", tmp_path / "w2"
    assert cli.dispatch(["tails", "--config", cfg, "--seed", "7", "--workers", "1", "--out", str(a)]) == 0
    assert cli.dispatch(["tails", "--config", cfg, "--seed", "7", "--workers", "2", "--out", str(b)]) == 0
    for name in ("tails.json", "tails.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    doc = json.loads((a / "tails.json").read_text())
    jsonschema.validate(doc, _schema())
    assert "workers" not in doc["config"]["values"]["run"]
    rows = (a / "tails.csv").read_text().splitlines()
    assert len(rows) - 1 == len(doc["results"]["tail_fit"]["lambda"]) == 6
    man = json.loads((b / "tails.manifest.json").read_text())
    assert man["config"]["values"]["run"]["workers"] == 2
    c = tmp_path / "w3"
    assert cli.dispatch(["tails", "--config", cfg, "--seed", "8", "--out", str(c)]) == 0
    assert (c / "tails.json").read_bytes() != (a / "tails.json").read_bytes()


def test_manifest_verify_detects_tampering(tmp_path):
    cfg = cli.parse_config({}, {"run.output_dir": str(tmp_path)})
    res = cli.run_compare(cfg)
    man = cli.write_report("compare", cfg, res, tmp_path)
    assert man.verify()
    with open(man.outputs[1], "a") as fh:
        fh.write("tampered\n")
    assert not man.verify()


def test_atomic_write_leaves_no_partial_files(tmp_path, monkeypatch):
    target = tmp_path / "r.json"
    target.write_text("old")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        cli._atomic_write(target, "new")
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["r.json"]


def test_json_encoding_of_special_values():
    from fractions import Fraction

    import numpy as np

    text = cli.dumps_report({"a": Fraction(1, 2), "b": float("inf"), "c": np.int64(3), "d": np.bool_(True)})
    assert json.loads(text) == {"a": "1/2", "b": "inf", "c": 3, "d": True}
    assert cli.dumps_csv(["x"], [[0.1]]) == "x\n0.1\n"


SMALL_MU = """
[datum]
K_max = 2

[norm]
T = 1.0
nt = 3

[mu]
mu = [1.0, 0.75, 0.5]
trials = 2
"""


def test_budgeted_mu_run_keeps_timings_out_of_the_report(tmp_path):
    cfg = _write(tmp_path, "mu.toml", SMALL_MU)
    a, b = tmp_path / "a", tmp_path / "b"
    for out, w in ((a, "1"), (b, "2")):
        assert cli.dispatch(["mu-scaling", "--config", cfg, "--workers", w, "--out", str(out)]) == 0
    for name in ("mu_scaling.json", "mu_scaling.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert "projection_s" not in json.loads((a / "mu_scaling.json").read_text())["results"]
    man = json.loads((a / "mu_scaling.manifest.json").read_text())
    assert set(man["timing"]["projection_s"]) == {"1.0", "0.75", "0.5"}
