import os
import sys

import pandas as pd
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "lab_scripts")))

import run_lab
from bell_lab import AdversaryError
from run_lab import EXIT_IO, EXIT_OK, EXIT_USAGE, MANIFEST_NAME, main

SMALL_RUN = """\
run.seed = 4
run.trials = 3000
source.kind = singlet
source.angles_a = 0 pi/2
source.angles_b = pi/4 -pi/4
analysis.inequalities = chsh ch
output.log = events.csv
output.report = report.txt
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_RUN)
    return path


def simulate_and_analyze(config, out):
    assert main(["simulate", "--config", str(config), "--out", str(out)]) == EXIT_OK
    assert main(["analyze", str(out / "events.csv"), "--config", str(config), "--out", str(out)]) == EXIT_OK


def test_simulate_writes_log_and_manifest(small_config, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(small_config), "--out", str(out), "--threads", "2"]) == EXIT_OK
    assert (out / "events.csv").exists()
    manifest = dict(line.split("=", 1) for line in (out / MANIFEST_NAME).read_text().splitlines())
    assert manifest["seed"] == "4"
    assert manifest["threads"] == "2"
    assert manifest["log"] == "events.csv"
    assert len(manifest["log_sha256"]) == 64
    assert "Successfully wrote" in capsys.readouterr().out


def test_seed_override_changes_the_log(small_config, tmp_path):
    main(["simulate", "--config", str(small_config), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(small_config), "--out", str(tmp_path / "b"), "--seed", "5"])
    main(["simulate", "--config", str(small_config), "--out", str(tmp_path / "c")])
    a, b, c = (tmp_path / name / "events.csv" for name in "abc")
    assert a.read_bytes() == c.read_bytes()
    assert a.read_bytes() != b.read_bytes()


def test_analyze_prints_and_writes_the_report(small_config, tmp_path, capsys):
    out = tmp_path / "run"
    simulate_and_analyze(small_config, out)
    printed = capsys.readouterr().out
    assert "Loaded" in printed
    assert "Bell test analysis of events.csv" in printed
    assert (out / "report.txt").exists()
    assert "report.arity=2" in (out / "report.kv").read_text()


def test_report_merges_runs(small_config, tmp_path, capsys):
    simulate_and_analyze(small_config, tmp_path / "first")
    simulate_and_analyze(small_config, tmp_path / "second")
    capsys.readouterr()
    kv_files = [str(tmp_path / name / "report.kv") for name in ("first", "second")]
    assert main(["report", *kv_files, "--out", str(tmp_path / "cmp")]) == EXIT_OK
    comparison = (tmp_path / "cmp" / "comparison.txt").read_text()
    assert "  first: policy trial" in comparison
    assert "  second: policy trial" in comparison
    assert comparison in capsys.readouterr().out


def test_bad_config_is_a_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("run.seed = 1\nrun.trials = lots\n")
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == EXIT_USAGE
    assert "Error: run.trials" in capsys.readouterr().out


def test_missing_seed_is_a_usage_error(tmp_path):
    path = tmp_path / "seedless.cfg"
    path.write_text("run.trials = 10\nsource.angles_a = 0 pi/2\nsource.angles_b = pi/4 -pi/4\n")
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path), "--seed", "3"]) == EXIT_OK


def test_unknown_subcommand_exits_with_usage(capsys):
    with pytest.raises(SystemExit) as stop:
        main(["calibrate"])
    assert stop.value.code == EXIT_USAGE


def test_missing_log_is_a_file_error(tmp_path, capsys):
    assert main(["analyze", str(tmp_path / "nowhere.csv"), "--out", str(tmp_path)]) == EXIT_IO
    assert "Error reading or writing files" in capsys.readouterr().out


def test_malformed_log_is_a_file_error(tmp_path):
    path = tmp_path / "broken.csv"
    path.write_text("this is not an event log\n")
    assert main(["analyze", str(path), "--out", str(tmp_path)]) == EXIT_IO


def test_report_without_files(capsys):
    assert main(["report"]) == EXIT_USAGE


def test_efficiency_oracle(tmp_path):
    config = tmp_path / "oracle.cfg"
    config.write_text("oracle.points = 2\noracle.grid_start = 0.9\noracle.grid_stop = 1.0\n")
    assert main(["oracle", "efficiency-curve", "--config", str(config), "--out", str(tmp_path)]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "efficiency_curve.csv")
    assert list(frame.columns) == ["eta", "value", "closed_form", "level"]
    assert frame["value"].iloc[-1] == pytest.approx(2.0, abs=1e-6)
    assert len(list((tmp_path / "witnesses").glob("efficiency_*.csv"))) == 2


def test_oracle_grid_is_checked(tmp_path):
    config = tmp_path / "oracle.cfg"
    config.write_text("oracle.grid_start = 0.0\n")
    assert main(["oracle", "efficiency-curve", "--config", str(config), "--out", str(tmp_path)]) == EXIT_USAGE


def test_oracle_delay_slots_out_of_range_is_a_usage_error(tmp_path, capsys):
    config = tmp_path / "oracle.cfg"
    config.write_text("oracle.points = 2\noracle.grid_start = 0.9\noracle.grid_stop = 1.0\noracle.delay_slots = 9\n")
    assert main(["oracle", "coincidence-curve", "--config", str(config), "--out", str(tmp_path)]) == EXIT_USAGE
    assert "delay slots must lie in 2..8" in capsys.readouterr().out


def test_infeasible_oracle_search_is_a_usage_error(tmp_path, capsys, monkeypatch):
    def infeasible(*args, **kwargs):
        raise AdversaryError("no feasible mixture for levels in [0.9, 1.0]")

    monkeypatch.setattr(run_lab, "coincidence_curve", infeasible)
    config = tmp_path / "oracle.cfg"
    config.write_text("oracle.points = 2\noracle.grid_start = 0.9\noracle.grid_stop = 1.0\n")
    assert main(["oracle", "coincidence-curve", "--config", str(config), "--out", str(tmp_path)]) == EXIT_USAGE
    assert "Error: no feasible mixture" in capsys.readouterr().out
