import csv
import json
import subprocess
import sys

import pytest

from stickycps.artifacts import write_tree
from stickycps.cli import main
from stickycps.model import ScenarioTree

SIM = """
seed = 7
[simulate]
model = "gbm"
n_steps = 16
n_paths = 5
d = 2
volatility = 0.3
s0 = [100.0, 50.0]
"""

TREE = """
[tree]
model = "sticky"
depth = 3
up = 1.1
down = 0.9
freeze_prob = 0.2
"""

MONOTONE = """
[tree]
model = "increasing"
depth = 3
up = 1.03
freeze = false
"""


@pytest.fixture
def write_cfg(tmp_path):
    def write(text, name="exp.toml"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return write


def run(*args):
    return main([str(a) for a in args])


def test_simulate_rows_and_header(tmp_path, write_cfg):
    out = tmp_path / "sim"
    assert run("simulate", "--config", write_cfg(SIM), "--out", out) == 0
    with open(out / "paths.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time", "asset_1", "asset_2", "path_id"]
    assert len(rows) - 1 == 5 * 17
    meta = json.loads((out / "paths.meta.json").read_text())
    assert meta["seed"] == 7 and meta["n_steps"] == 16


def test_simulate_is_byte_identical(tmp_path, write_cfg):
    cfg = write_cfg(SIM)
    for name in ("a", "b"):
        assert run("simulate", "--config", cfg, "--out", tmp_path / name) == 0
    assert (tmp_path / "a/paths.csv").read_bytes() == (tmp_path / "b/paths.csv").read_bytes()
    assert run("simulate", "--config", cfg, "--seed", 8, "--out", tmp_path / "c") == 0
    assert (tmp_path / "a/paths.csv").read_bytes() != (tmp_path / "c/paths.csv").read_bytes()


def test_cps_pass_and_verify(tmp_path, write_cfg):
    out = tmp_path / "cps"
    assert run("cps", "--config", write_cfg(TREE), "--eps", 0.1, "--out", out) == 0
    summary = json.loads((out / "cps.json").read_text())
    assert summary["verdict"] == "pass"
    for f in ("tree.json", "skeleton.json", "measure.json", "cps_nodes.csv"):
        assert (out / f).exists()
    assert run("verify", "--out", out) == 0


def test_cps_output_is_byte_identical(tmp_path, write_cfg):
    cfg = write_cfg(TREE)
    for name in ("a", "b"):
        assert run("cps", "--config", cfg, "--eps", 0.1, "--out", tmp_path / name) == 0
    for f in ("skeleton.json", "measure.json", "cps.json", "cps_nodes.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_tree_then_cps_from_file(tmp_path, write_cfg):
    assert run("tree", "--config", write_cfg(TREE), "--out", tmp_path / "t") == 0
    cfg = write_cfg(f'[cps]\neps = 0.2\ntree = "{tmp_path / "t" / "tree.json"}"\n', "cps.toml")
    assert run("cps", "--config", cfg, "--out", tmp_path / "c") == 0


def test_hypothesis_failure_exits_one(tmp_path, write_cfg):
    out = tmp_path / "mono"
    assert run("cps", "--config", write_cfg(MONOTONE), "--eps", 0.1, "--out", out) == 1
    summary = json.loads((out / "cps.json").read_text())
    assert summary["verdict"] == "hypothesis"
    assert summary["failures"][0]["condition"] == "i"
    assert not (out / "measure.json").exists()
    # artifacts are consistent, but the stored verdict is a failure
    assert run("verify", "--out", out) == 1


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["simulate", "--seed", "-1"],
    ["simulate", "--seed", "abc"],
    ["cps", "--eps", "0.1"],
    ["simulate", "--config", "/nonexistent/exp.toml"],
])
def test_usage_errors_exit_two(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path)] if argv else argv) == 2


def test_unknown_config_key_exits_two(tmp_path, write_cfg, capsys):
    cfg = write_cfg("[simulate]\nhurts = 0.7\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 2
    assert "unknown key 'hurts' in [simulate]" in capsys.readouterr().err


def test_bad_toml_and_bad_values_exit_two(tmp_path, write_cfg):
    assert run("simulate", "--config", write_cfg("[simulate\n"), "--out", tmp_path) == 2
    assert run("simulate", "--config", write_cfg("[simulate]\nn_steps = 0\n"), "--out", tmp_path) == 2
    assert run("cps", "--config", write_cfg(TREE), "--eps", -0.1, "--out", tmp_path) == 2


def test_invalid_tree_input_exits_two(tmp_path, write_cfg):
    bad = ScenarioTree([[1.0], [1.1], [0.9]], [0, 1, 1], (((1, 0.6), (2, 0.5)), (), ()))
    write_tree(bad, tmp_path / "bad.json")
    cfg = write_cfg(f'[cps]\neps = 0.1\ntree = "{tmp_path / "bad.json"}"\n')
    assert run("cps", "--config", cfg, "--out", tmp_path / "o") == 2


def test_verify_missing_directory_exits_two(tmp_path):
    assert run("verify", "--out", tmp_path / "nope") == 2


@pytest.fixture
def good_run(tmp_path, write_cfg):
    out = tmp_path / "good"
    assert run("cps", "--config", write_cfg(TREE), "--eps", 0.1, "--out", out) == 0
    return out


def test_truncated_node_table_exits_three(good_run, capsys):
    path = good_run / "cps_nodes.csv"
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    assert run("verify", "--out", good_run) == 3
    assert "cps_nodes.csv" in capsys.readouterr().out


def test_tampered_measure_exits_three(good_run):
    path = good_run / "measure.json"
    m = json.loads(path.read_text())
    m["nodes"][0]["atoms"][0]["q"] *= 1.01
    path.write_text(json.dumps(m))
    assert run("verify", "--out", good_run) == 3


def test_tampered_shadow_price_exits_three(good_run):
    path = good_run / "cps_nodes.csv"
    lines = path.read_text().splitlines()
    fields = lines[2].split(",")
    fields[4] = repr(float(fields[4]) * 1.001)
    lines[2] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    assert run("verify", "--out", good_run) == 3


def test_garbage_json_exits_three(good_run, capsys):
    (good_run / "skeleton.json").write_text("{not json")
    assert run("verify", "--out", good_run) == 3
    assert "skeleton.json" in capsys.readouterr().out


def test_missing_artifact_exits_three(good_run):
    (good_run / "measure.json").unlink()
    assert run("verify", "--out", good_run) == 3


def test_tolerance_flag_is_used(good_run):
    path = good_run / "cps_nodes.csv"
    lines = path.read_text().splitlines()
    fields = lines[2].split(",")
    fields[4] = repr(float(fields[4]) + 1e-7)
    lines[2] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    assert run("verify", "--out", good_run) == 3
    assert run("verify", "--out", good_run, "--tolerance", 1e-4) == 0


def test_sticky_on_tree_and_paths(tmp_path, write_cfg):
    cfg = write_cfg(TREE + "[sticky]\ndelta = 5.0\n")
    assert run("sticky", "--config", cfg, "--out", tmp_path / "s") == 0
    rows = list(csv.DictReader(open(tmp_path / "s/sticky.csv", newline="")))
    assert len(rows) == 13
    assert run("simulate", "--config", write_cfg(SIM, "sim.toml"), "--out", tmp_path / "p") == 0
    cfg = write_cfg(f'[sticky]\ndelta = 100.0\ninput = "{tmp_path / "p/paths.csv"}"\n', "st.toml")
    assert run("sticky", "--config", cfg, "--out", tmp_path / "s2") == 0


def test_sticky_zero_cell_exits_one(tmp_path, write_cfg):
    cfg = write_cfg(MONOTONE + "[sticky]\ndelta = 1.0\n")
    assert run("sticky", "--config", cfg, "--out", tmp_path) == 1


def test_sticky_bad_paths_file_exits_two(tmp_path, write_cfg):
    (tmp_path / "bad.csv").write_text("time,asset_1,path_id\n0.0,oops,0\n")
    cfg = write_cfg(f'[sticky]\ndelta = 1.0\ninput = "{tmp_path / "bad.csv"}"\n')
    assert run("sticky", "--config", cfg, "--out", tmp_path / "o") == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "stickycps", "verify", "--out", str(tmp_path / "x")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "does not exist" in proc.stderr
