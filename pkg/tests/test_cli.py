import csv
import json
import subprocess
import sys

import pytest

from asglimits.cli import main


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    return list(csv.DictReader(lines[1:]))


def test_moments_table(tmp_path):
    assert main(["moments", "--theta", "0", "--sigma", "0", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "moments.csv")
    row = next(r for r in rows if r["n"] == "2" and r["k"] == "1")
    assert float(row["value"]) == 1.0
    check = read_csv(tmp_path / "moments_oracle.csv")
    assert max(float(r["rel_dev"]) for r in check) < 1e-8


def test_moments_oracle_with_selection(tmp_path):
    assert main(["moments", "--theta", "1", "--sigma", "1", "--out", str(tmp_path)]) == 0
    check = read_csv(tmp_path / "moments_oracle.csv")
    assert len(check) == 59 * 3
    assert max(float(r["rel_dev"]) for r in check) < 1e-8


def test_cdi_speed(tmp_path):
    assert main(["cdi", "--t-grid", "0.01", "--out", str(tmp_path)]) == 0
    (row,) = read_csv(tmp_path / "cdi.csv")
    assert row["nu"] == "200" and row["sandwich"] == "true"


def test_coupling_check(tmp_path):
    assert main(["coupling-check", "--theta", "1", "--sigma", "2", "--replicates", "200",
                 "--out", str(tmp_path)]) == 0
    (row,) = read_csv(tmp_path / "coupling_check.csv")
    assert row["violations"] == "0" and row["trajectories"] == "200"


def test_coupling_check_default_thousand(tmp_path):
    assert main(["coupling-check", "--out", str(tmp_path)]) == 0
    (row,) = read_csv(tmp_path / "coupling_check.csv")
    assert row["violations"] == "0" and row["identical_paths"] == "1000"


@pytest.mark.parametrize("args", [
    ["simulate", "--theta", "1", "--sigma", "1", "--replicates", "3"],
    ["supdev", "--sigma", "1", "--n0", "2000", "--replicates", "20", "--t-grid", "0.2,0.1"],
    ["clt", "--replicates", "60", "--eps-list", "0.01,0.0025", "--format", "json"],
])
def test_byte_identical_reruns(tmp_path, args):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert "config.resolved" in names and len(names) >= 2
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_config_hash_embedded(tmp_path):
    main(["cdi", "--t-grid", "0.1", "--out", str(tmp_path)])
    resolved = json.loads((tmp_path / "config.resolved").read_text())
    assert resolved["config"]["t_grid"] == [0.1]
    assert (tmp_path / "cdi.csv").read_text().startswith(
        f"# config_hash={resolved['config_hash']} seed={resolved['config']['seed']}")


def test_json_format(tmp_path):
    assert main(["cdi", "--t-grid", "0.01,0.001", "--format", "json", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "cdi.json").read_text())
    assert [r["nu"] for r in doc["rows"]] == [200, 2000]
    assert "config_hash" in doc and "seed" in doc


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"t-grid": [0.001], "seed": 5}))
    assert main(["cdi", "--config", str(cfg), "--seed", "6", "--out", str(tmp_path)]) == 0
    resolved = json.loads((tmp_path / "config.resolved").read_text())["config"]
    assert resolved["t_grid"] == [0.001] and resolved["seed"] == 6


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("ASGLIMITS_OUT", str(tmp_path / "env"))
    assert main(["cdi", "--t-grid", "0.1"]) == 0
    assert (tmp_path / "env" / "cdi.csv").exists()


@pytest.mark.parametrize("args", [
    ["moments", "--theta", "-1"],
    ["moments", "--nmax", "1"],
    ["cdi", "--n0", "5"],
    ["clt", "--replicates", "10"],
    ["cdi", "--t-grid", "a,b"],
    ["nonsense"],
    [],
])
def test_invalid_config_exit_two(tmp_path, args):
    assert main(args + ["--out", str(tmp_path)] if args else args) == 2


def test_bad_config_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["cdi", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text(json.dumps({"unknown_key": 1}))
    assert main(["cdi", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_runtime_failure_exit_one(tmp_path):
    # an entrance level this low is reached after the first grid time
    assert main(["clt", "--n0", "10", "--replicates", "50", "--out", str(tmp_path)]) == 1


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "asglimits", "cdi", "--t-grid", "0.01",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.strip().endswith("cdi.csv")
    helptext = subprocess.run([sys.executable, "-m", "asglimits", "clt", "--help"],
                              capture_output=True, text=True).stdout
    assert "Defaults:" in helptext and "--eps-list" in helptext
