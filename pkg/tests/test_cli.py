import csv
import json
from pathlib import Path

import pytest

from lidal import cli


def _run_dir(parent: Path, command: str) -> Path:
    dirs = sorted(p for p in parent.iterdir() if p.name.startswith(command))
    assert len(dirs) == 1 and not dirs[0].name.endswith(".partial")
    return dirs[0]


def test_hash_ignores_key_order():
    a = {"seed": 1, "system": "img", "iterations": 3}
    b = {"iterations": 3, "system": "img", "seed": 1}
    assert cli.config_hash(a) == cli.config_hash(b)
    assert cli.config_hash(a) != cli.config_hash({**a, "seed": 2})


def test_missing_config_exits_with_usage_code(tmp_path):
    code = cli.run(["roc", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)])
    assert code == 2


def test_unknown_config_key_is_rejected(tmp_path):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"colour": "blue"}))
    assert cli.run(["roc", "--config", str(config), "--out", str(tmp_path / "o")]) == 2


def test_scenario_requires_a_seed(tmp_path):
    assert cli.run(["scenario", "1", "--out", str(tmp_path)]) == 2
    assert not any(tmp_path.iterdir())


def test_roc_outputs(tmp_path):
    assert cli.run(["roc", "--points", "25", "--out", str(tmp_path)]) == 0
    run = _run_dir(tmp_path, "roc")
    rows = list(csv.reader(open(run / "roc_monostatic.csv")))
    assert len(rows) == 26  # header plus n_points
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["resolved"]["n_points"] == 25
    assert manifest["config_hash"][:12] in run.name


def test_mobility_trace_export(tmp_path):
    code = cli.run(["mobility", "--duration", "60", "--seed", "4", "--out", str(tmp_path)])
    assert code == 0
    run = _run_dir(tmp_path, "mobility")
    header = next(csv.reader(open(run / "trace.csv")))
    assert header == ["t_s", "target_id", "x_m", "y_m"]


def test_scenario_outputs_are_byte_identical(tmp_path):
    config = tmp_path / "small.json"
    config.write_text(json.dumps({"max_targets": 2, "iterations": 1}))
    args = ["scenario", "1", "--system", "img", "--disting", "ccm", "--seed", "7",
            "--config", str(config), "--threads", "1"]
    assert cli.run(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.run(args + ["--out", str(tmp_path / "b")]) == 0
    run_a = _run_dir(tmp_path / "a", "scenario")
    run_b = _run_dir(tmp_path / "b", "scenario")
    names = sorted(p.name for p in run_a.glob("*.csv"))
    assert names and names == sorted(p.name for p in run_b.glob("*.csv"))
    for name in names:
        assert (run_a / name).read_bytes() == (run_b / name).read_bytes()


def test_mobility_factor_sweep_column(tmp_path):
    config = tmp_path / "small.json"
    config.write_text(json.dumps({"max_targets": 1, "iterations": 1}))
    code = cli.run(["scenario", "3", "--system", "img", "--mf", "0.5", "--seed", "1",
                    "--config", str(config), "--threads", "1", "--out", str(tmp_path / "o")])
    assert code == 0
    run = _run_dir(tmp_path / "o", "scenario")
    rows = list(csv.DictReader(open(run / "scenario3_img_pccm_mf0.50_rows.csv")))
    assert rows and all(r["mobility_factor"] == "0.5000" for r in rows)


def test_mf_only_for_scenario_three(tmp_path):
    code = cli.run(["scenario", "1", "--mf", "0.5", "--seed", "1", "--out", str(tmp_path)])
    assert code == 2
    assert not any(tmp_path.iterdir())


def test_failed_run_leaves_no_output(tmp_path, monkeypatch):
    def explode(resolved, out):
        (out / "half_written.csv").write_text("x\n")
        raise RuntimeError("boom")

    monkeypatch.setitem(cli.COMMANDS, "roc", explode)
    assert cli.run(["roc", "--out", str(tmp_path)]) == 1
    assert not any(tmp_path.iterdir())


def test_main_exits_with_code(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["roc", "--points", "5", "--out", str(tmp_path)])
    assert info.value.code == 0


def test_empty_case_study_writes_valid_json(tmp_path, capsys):
    # a one-minute window usually has nobody present, so no MAPE can be scored
    code = cli.run(["case-study", "--system", "mimo", "--behaviour", "nomadic",
                    "--mobility", "random_walk", "--duration", "10", "--seed", "0",
                    "--out", str(tmp_path)])
    assert code == 0
    printed = json.loads(capsys.readouterr().out)
    summary = json.loads((_run_dir(tmp_path, "case-study") / "summary.json").read_text())
    (entry,) = summary.values()
    assert entry["median_mape"] is None
    assert printed["result"]["case_mimo_nomadic_random_walk"]["median_mape"] is None
