import csv
import json
import math
import os

import pytest
import yaml

from spinboson.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, cmd_energy, cmd_gsnorm, cmd_oracle, main
from spinboson.config import ConfigError, parse_config
from spinboson.outputs import verify_manifest


def write_cfg(tmp_path, data, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def manifest(d):
    with open(os.path.join(d, "manifest.json")) as fh:
        return json.load(fh)


def test_pairings_partitions(capsys):
    assert main(["pairings", "4", "--partitions"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert json.loads(lines[0])["pairing"] == [[1, 2], [3, 4]]


def test_pairings_components_to_dir(tmp_path):
    out = tmp_path / "p"
    assert main(["pairings", "6", "--linked", "--components", "--out", str(out)]) == EXIT_OK
    recs = [json.loads(l) for l in (out / "pairings.jsonl").read_text().splitlines()]
    assert recs and all(r["linked"] and len(r["linked_components"]) == 1 for r in recs)
    assert all(verify_manifest(str(out)).values())


def test_energy_scalar_e2(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"preset": "scalar-exp"},
                               "compute": {"n_max": 4, "nodes": 64, "routes": ["direct", "eta"]}})
    out = str(tmp_path / "e")
    assert cmd_energy(cfg, out) == EXIT_OK
    rows = read_csv(os.path.join(out, "energy.csv"))
    assert list(rows[0].keys()) == ["n", "E_n", "error_estimate", "method"]
    for r in rows:
        if r["n"] == "2":
            assert abs(float(r["E_n"]) + math.pi) <= max(float(r["error_estimate"]), 1e-12)
    man = manifest(out)
    assert man["exit_code"] == 0 and all(c["passed"] for c in man["checks"])
    assert all(verify_manifest(out).values())
    data = json.loads(open(os.path.join(out, "energy.json")).read())
    eta_rec = [r for r in data["records"] if r["method"] == "eta-richardson"]
    assert eta_rec and all(len(r["eta_trace"]["eta"]) == 6 for r in eta_rec)


def test_energy_workers_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"preset": "two-level-exp"}, "compute": {"n_max": 4, "nodes": 24}})
    outs = []
    for w in (1, 3):
        out = str(tmp_path / f"w{w}")
        assert cmd_energy(cfg, out, workers=w) == EXIT_OK
        outs.append(out)
    for name in ("energy.csv", "energy.json"):
        a, b = (open(os.path.join(o, name), "rb").read() for o in outs)
        assert a == b


def test_validate_infrared_exit(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"model": {"preset": "scalar-exp", "params": {"alpha": -0.75}}})
    out = str(tmp_path / "v")
    assert main(["validate", "--config", cfg, "--out", out]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "infrared" in err
    assert manifest(out)["exit_code"] == EXIT_CONFIG


@pytest.mark.parametrize("data", [
    {"model": {"preset": "nope"}},
    {"model": {"preset": "scalar-exp"}, "compute": {"nodes": -3}},
    {"model": {"preset": "scalar-exp"}, "compute": {"n_max": 9}},
    {"model": {"h_at": [[0, 1], [2, 0]]}},
    ["not", "a", "mapping"],
])
def test_config_errors(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_bad_config_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"preset": "scalar-exp"}, "compute": {"routes": ["magic"]}})
    out = str(tmp_path / "bad")
    assert cmd_energy(cfg, out) == EXIT_CONFIG
    assert manifest(out)["errors"][0]["stage"] == "config"


def test_missing_file_exit(tmp_path):
    assert main(["energy", "--config", str(tmp_path / "absent.yaml"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_preset_seed_and_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SPINBOSON_OUT", str(tmp_path / "env"))
    assert main(["validate", "--preset", "random-atom", "--seed", "4"]) == EXIT_OK
    assert (tmp_path / "env" / "validate.json").exists()


def test_flagged_eta_is_exit_3(tmp_path):
    # a schedule far outside the asymptotic regime produces a non-monotone trace
    cfg = write_cfg(tmp_path, {"model": {"preset": "two-level-exp"},
                               "compute": {"n_max": 4, "nodes": 24, "routes": ["eta"], "eta": {"eta0": 40.0}}})
    out = str(tmp_path / "f")
    assert cmd_energy(cfg, out) == EXIT_NUMERIC
    man = manifest(out)
    assert "not monotone" in man["errors"][0]["message"]
    assert (tmp_path / "f" / "energy.csv").exists()


def test_gsnorm(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"preset": "scalar-exp"}, "compute": {"m_max": 2, "nodes": 64}})
    out = str(tmp_path / "g")
    assert cmd_gsnorm(cfg, out) == EXIT_OK
    rows = read_csv(os.path.join(out, "gsnorm.csv"))
    assert [float(r["norm2"]) for r in rows] == pytest.approx([1, 2 * math.pi, 2 * math.pi ** 2], rel=1e-9)
    assert all(verify_manifest(out).values())


def test_oracle(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"preset": "two-level-exp"}, "oracle": {"modes": 4, "n_max": 3}})
    out = str(tmp_path / "o")
    assert cmd_oracle(cfg, out) == EXIT_OK
    rows = read_csv(os.path.join(out, "oracle.csv"))
    assert list(rows[0].keys()) == ["lambda", "E", "bound_low", "partial_sum_n", "remainder", "slope_window"]
    assert len(rows) == 9
    man = manifest(out)
    assert all(c["passed"] for c in man["checks"])
