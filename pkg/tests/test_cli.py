import csv
import json

import pytest

from lastinch.cli import main
from lastinch.config import builtin_config_dir

GOLDEN = str(builtin_config_dir() / "gear_0p5mm_closed.cfg")


def tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def run_cli(*argv):
    return main([str(a) for a in argv])


def small_config(tmp_path, runs=3, extra=""):
    text = (builtin_config_dir() / "gear_0p5mm_closed.cfg").read_text().replace("runs = 10", f"runs = {runs}")
    p = tmp_path / "small.cfg"
    p.write_text(text + extra)
    return p


def test_golden_replay_is_byte_identical(tmp_path, capsys):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run_cli("gen-data", "--config", GOLDEN, "--out", out) == 0
        assert run_cli("run", "--config", GOLDEN, "--out", out, "--jobs", 1 + k) == 0
        assert run_cli("report", "--out", out) == 0
        outs.append(tree(out))
    assert outs[0] == outs[1]
    assert len([k for k in outs[0] if k.startswith("traces/")]) == 10
    rows = list(csv.DictReader((tmp_path / "run0" / "results.csv").open()))
    assert [int(r["seed"]) for r in rows] == list(range(7, 17))


def test_stagewise_equals_autofill(tmp_path, capsys):
    cfg = small_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli("gen-data", "--config", cfg, "--out", out) == 0
    for cmd in ("parse-demo", "predict", "reproject", "run"):
        assert run_cli(cmd, "--config", cfg, "--out", a) == 0
    assert run_cli("run", "--config", cfg, "--out", b) == 0
    assert tree(a) == tree(b)
    # later stages fall back to the config written by gen-data
    assert run_cli("run", "--out", a) == 0
    assert tree(a) == tree(b)


def test_seed_flag_changes_scene(tmp_path, capsys):
    cfg = small_config(tmp_path)
    run_cli("gen-data", "--config", cfg, "--out", tmp_path / "s7")
    run_cli("gen-data", "--config", cfg, "--out", tmp_path / "s8", "--seed", 8)
    m7 = json.loads((tmp_path / "s7" / "scene" / "meta.json").read_text())
    m8 = json.loads((tmp_path / "s8" / "scene" / "meta.json").read_text())
    assert m7["pose"] != m8["pose"] and m8["seed"] == 8


def test_paired_policies(tmp_path, capsys):
    cfg = small_config(tmp_path, runs=6)
    run_cli("gen-data", "--config", cfg, "--out", tmp_path)
    assert run_cli("run", "--config", cfg, "--out", tmp_path, "--policies", "open,closed") == 0
    rows = list(csv.DictReader((tmp_path / "results.csv").open()))
    by = {(r["seed"], r["policy"]): int(r["success"]) for r in rows}
    seeds = sorted({r["seed"] for r in rows})
    assert len(rows) == 12 and all((s, "open") in by and (s, "closed") in by for s in seeds)
    assert all(by[(s, "closed")] >= by[(s, "open")] for s in seeds)


def test_report_full_success_row(tmp_path, capsys):
    res = tmp_path / "results.csv"
    with res.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "instance", "seed", "policy", "success", "ticks", "final_err_mm", "final_err_deg",
                    "error"])
        for s in range(10):
            w.writerow(["demo", "gear_a", s, "closed", 1, 40, "0.1", "0.1", ""])
        for s in range(10):
            w.writerow(["demo", "gear_a", s, "open", int(s < 3), 40, "1.0", "0.1", ""])
    assert run_cli("report", "--out", tmp_path, res) == 0
    text = capsys.readouterr().out
    lines = {ln.split()[2]: ln for ln in text.splitlines()[2:]}
    assert "100.0%" in lines["closed"] and "10" in lines["closed"].split()
    assert "30.0%" in lines["open"]
    summary = list(csv.DictReader((tmp_path / "summary.csv").open()))
    assert summary[0]["successes"] == "10" and summary[0]["runs"] == "10"
    assert (tmp_path / "summary.txt").read_text() == text


def test_sweep_grid(tmp_path, capsys):
    cfg = small_config(tmp_path, runs=2)
    code = run_cli("sweep", "--config", cfg, "--out", tmp_path / "sw", "--set", "clearance_mm=5,0.5",
                   "--policies", "closed,open")
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "sw" / "sweep.csv").open()))
    assert len(rows) == 8 and {r["clearance_mm"] for r in rows} == {"5", "0.5"}
    assert "clearance_mm" in capsys.readouterr().out


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.mark.parametrize("argv, kind", [
    (["run", "--config", "no_such.cfg"], "MissingArtifact"),
    (["run"], "ConfigError"),
    (["report", "missing.csv"], "MissingArtifact"),
    (["sweep", "--config", GOLDEN], "ConfigError"),
    (["sweep", "--config", GOLDEN, "--set", "task=standing"], "ConfigError"),
    (["run", "--config", GOLDEN, "--policies", "wobbly"], "ConfigError"),
    (["run", "--config", GOLDEN, "--jobs", "0"], "ConfigError"),
])
def test_error_json(tmp_path, capsys, argv, kind):
    code = run_cli(*argv, "--out", tmp_path / "nothing") if argv[0] != "report" else \
        run_cli("report", "--out", tmp_path, tmp_path / argv[1])
    err = error_of(capsys)
    assert err["type"] == kind and err["exit_code"] == code != 0 and err["error"]


def test_distinct_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[scenario]\ntask = juggling\n")
    codes = {
        "config": run_cli("gen-data", "--config", bad, "--out", tmp_path),
        "missing": run_cli("gen-data", "--config", tmp_path / "absent.cfg", "--out", tmp_path),
        "no-upstream": run_cli("predict", "--config", GOLDEN, "--out", tmp_path / "empty"),
    }
    assert codes == {"config": 30, "missing": 31, "no-upstream": 31}


def test_scene_config_mismatch(tmp_path, capsys):
    cfg = small_config(tmp_path)
    run_cli("gen-data", "--config", cfg, "--out", tmp_path / "o")
    other = small_config(tmp_path, extra="").read_text().replace("model = gear_a", "model = gear_b")
    (tmp_path / "other.cfg").write_text(other)
    assert run_cli("predict", "--config", tmp_path / "other.cfg", "--out", tmp_path / "o") == 30
    assert error_of(capsys)["type"] == "ConfigError"


def test_centroid_needs_own_target(tmp_path, capsys):
    cfg = small_config(tmp_path)
    run_cli("gen-data", "--config", cfg, "--out", tmp_path)
    assert run_cli("run", "--config", cfg, "--out", tmp_path, "--policies", "closed,centroid") == 30
