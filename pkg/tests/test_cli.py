import json
import subprocess
import sys

import pandas as pd
import pytest

from intanfactor.cli import main

from conftest import make_study_dir


def test_run_exit_zero_and_outputs(study_config, tmp_path, capsys):
    assert main(["run", "--config", str(study_config), "--tables", "T2,T4", "--out", str(tmp_path)]) == 0
    assert "T4: ok" in capsys.readouterr().out
    assert (tmp_path / "T2.csv").exists() and (tmp_path / "T4.txt").exists()
    assert not (tmp_path / "T1.csv").exists()


def test_validate_reports_windows(study_config, capsys):
    assert main(["validate", "--config", str(study_config)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["periods"]["early"]["months"] == 60 and report["rejected_rows"]["returns"] == 0


def test_validation_failure_exit_two(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("fundamentals = a.csv\n")
    assert main(["validate", "--config", str(cfg)]) == 2
    assert "ConfigError" in capsys.readouterr().err


def test_strict_rejects_bad_row_exit_two(tmp_path):
    cfg = make_study_dir(tmp_path, n_firms=60)
    r = tmp_path / "data" / "returns.csv"
    lines = r.read_text().splitlines()
    first = lines[1].split(",")
    first[-1] = "-1.5"
    lines[1] = ",".join(first)
    r.write_text("\n".join(lines) + "\n")
    assert main(["validate", "--config", str(cfg)]) == 0
    assert main(["run", "--config", str(cfg), "--strict", "--tables", "T2"]) == 2


def test_data_error_exit_three(tmp_path):
    cfg = make_study_dir(tmp_path, n_firms=60)
    f = tmp_path / "data" / "factors.csv"
    lines = f.read_text().splitlines()
    del lines[5]
    f.write_text("\n".join(lines) + "\n")
    assert main(["run", "--config", str(cfg)]) == 3


def test_table_level_error_sets_exit_code(tmp_path, capsys):
    cfg = make_study_dir(tmp_path, n_firms=60)
    fund = tmp_path / "data" / "fundamentals.csv"
    pd.read_csv(fund).drop(columns="ltg").to_csv(fund, index=False)
    assert main(["run", "--config", str(cfg), "--tables", "T2,T9"]) == 3
    err = capsys.readouterr().err
    assert "T9: MissingVariable" in err
    assert (tmp_path / "out" / "T2.csv").exists()


def test_synth_subcommand(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_firms": 15, "window": "2001-01..2001-12", "seed": 4}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "d")]) == 0
    assert {p.name for p in (tmp_path / "d").iterdir()} == {
        "fundamentals.csv", "returns.csv", "factors.csv", "truth.csv"}
    spec.write_text(json.dumps({"n_firms": -1}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "e")]) == 2


def test_console_script_entry_point(study_config):
    out = subprocess.run([sys.executable, "-m", "intanfactor.cli", "validate", "--config", str(study_config)],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr


def test_unknown_table_is_usage_error(study_config):
    with pytest.raises(SystemExit) as info:
        main(["run", "--config", str(study_config), "--tables", "T42"])
    assert info.value.code == 2
