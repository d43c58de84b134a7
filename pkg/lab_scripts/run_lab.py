#!/usr/bin/env python3
"""
Bell Test Laboratory

Simulates Bell experiments into event logs, analyzes event logs (simulated
or recorded) against every inequality the laboratory knows, runs the
local-strategy and quantum optimizers, and merges analysis reports into
one comparison.

Subcommands:
- simulate: run the configured source through settings and channel, write
  the event log and a run manifest
- analyze:  pair a log under the configured coincidence policy and write a
  text report plus its key=value form
- oracle:   efficiency-curve, coincidence-curve or eberhard; writes curve
  CSVs and witness strategy tables
- report:   merge key=value reports into one comparison table

Exit codes: 0 completed (violation or not), 1 usage or configuration
error, 2 unreadable or unwritable files, 3 internal failure.

Usage:
    python run_lab.py simulate --config configs/singlet_chsh.cfg
    python run_lab.py analyze out/events.csv --config configs/singlet_chsh.cfg
    python run_lab.py oracle efficiency-curve --out out/oracle
    python run_lab.py report out/window/report.kv out/slots/report.kv
"""

import argparse
import hashlib
import os
import platform
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

# Add the parent directory to the path so we can import from bell_lab
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
from bell_lab import (
    AdversaryError,
    ConfigError,
    DomainError,
    LogParseError,
    LogValidationError,
    LogWriteError,
    ReportError,
    SettingReplayError,
)
from bell_lab.adversary_search import coincidence_curve, eberhard_table, efficiency_curve
from bell_lab.analysis import analyze_log
from bell_lab.event_model import read_log, write_log
from bell_lab.experiment import run_experiment
from bell_lab.pair_source import save_strategy_table
from bell_lab.reports import merge_reports, read_report, render_text, write_report
from bell_lab.run_config import (
    ORACLE_TASKS,
    build_analysis,
    build_experiment,
    build_policy,
    load_config,
    parse_config_text,
    validate_config,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_INTERNAL = 3
MANIFEST_NAME = "manifest.txt"


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def load_run_config(args, require_seed=True):
    """Config file (or defaults) with command-line overrides applied."""
    if args.config:
        cfg = load_config(args.config, require_seed=False)
    else:
        cfg = parse_config_text("", require_seed=False)
    cfg = cfg.with_overrides(
        **{
            "run.seed": args.seed,
            "run.threads": getattr(args, "threads", None),
            "output.dir": args.out,
        }
    )
    if require_seed and cfg["run.seed"] is None:
        raise ConfigError("run.seed", "is mandatory (set it in the config or pass --seed)")
    return cfg


def write_manifest(out_dir, cfg, log_path, n_events):
    entries = {
        "config_path": cfg.path or "",
        "config_sha256": cfg.digest,
        "seed": cfg["run.seed"],
        "trials": cfg["run.trials"],
        "threads": cfg["run.threads"],
        "events": n_events,
        "log": log_path.name,
        "log_sha256": file_sha256(log_path),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }
    path = out_dir / MANIFEST_NAME
    with open(path, "w") as f:
        for key, value in entries.items():
            f.write(f"{key}={value}\n")
    return path


def cmd_simulate(args):
    cfg = load_run_config(args)
    validate_config(cfg)
    experiment = build_experiment(cfg)
    print(f"Simulating {experiment.trials} trials of {experiment.source_name} (seed {experiment.seed})")
    log = run_experiment(experiment)

    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / cfg["output.log"]
    write_log(log, log_path)
    manifest = write_manifest(out_dir, cfg, log_path, len(log))
    print(f"Successfully wrote {len(log)} events to {log_path}")
    print(f"Successfully wrote run manifest to {manifest}")
    return EXIT_OK


def cmd_analyze(args):
    cfg = load_run_config(args, require_seed=False)
    log = read_log(args.log)
    print(f"Loaded {len(log)} events from {args.log}")
    period = log.header.extras.get("run.trial_period_ns")
    policy = build_policy(cfg, int(period) if period is not None else None)
    options = build_analysis(cfg)

    analysis = analyze_log(log, policy, options)
    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path, kv_path = write_report(analysis, out_dir / cfg["output.report"], Path(args.log).name)
    print(render_text(analysis, Path(args.log).name), end="")
    print(f"Successfully wrote report to {report_path} and {kv_path}")
    return EXIT_OK


def _grid(cfg):
    return np.linspace(cfg["oracle.grid_start"], cfg["oracle.grid_stop"], cfg["oracle.points"])


def _save_witnesses(out_dir, stem, witnesses):
    witness_dir = out_dir / "witnesses"
    witness_dir.mkdir(parents=True, exist_ok=True)
    for k, witness in enumerate(witnesses):
        save_strategy_table(witness, witness_dir / f"{stem}_{k:02d}.csv")
    print(f"Successfully wrote {len(witnesses)} witness tables to {witness_dir}")


def cmd_oracle(args):
    cfg = load_run_config(args, require_seed=args.task == "eberhard")
    grid = _grid(cfg)
    if grid.min() <= 0 or grid.max() > 1:
        raise ConfigError("oracle.grid_start", "grid must lie within (0, 1]")
    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.task == "efficiency-curve":
        frame, witnesses = efficiency_curve(grid)
        path = out_dir / "efficiency_curve.csv"
        frame.to_csv(path, index=False, lineterminator="\n")
        _save_witnesses(out_dir, "efficiency", witnesses)
    elif args.task == "coincidence-curve":
        frame, witnesses = coincidence_curve(
            grid, cfg["oracle.delay_slots"], cfg["oracle.window_slots"], cfg["oracle.slot_ticks"]
        )
        path = out_dir / "coincidence_curve.csv"
        frame.to_csv(path, index=False, lineterminator="\n")
        _save_witnesses(out_dir, "coincidence", witnesses)
    else:
        frame, curves = eberhard_table(grid, cfg["oracle.starts"], cfg["run.seed"])
        path = out_dir / "eberhard_thresholds.csv"
        frame.to_csv(path, index=False, lineterminator="\n")
        for name, curve in curves.items():
            curve.to_csv(out_dir / f"eberhard_{name}.csv", index=False, lineterminator="\n")

    print(frame.to_string(index=False))
    print(f"Successfully wrote {path}")
    return EXIT_OK


def cmd_report(args):
    if not args.reports:
        raise ReportError("no report files given")
    named = [(Path(path).parent.name or Path(path).stem, read_report(path)) for path in args.reports]
    comparison = merge_reports(named)
    print(comparison, end="")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "comparison.txt"
        with open(path, "w") as f:
            f.write(comparison)
        print(f"Successfully wrote comparison to {path}")
    return EXIT_OK


class LabArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"Error: {message}")
        sys.exit(EXIT_USAGE)


def build_parser():
    parser = LabArgumentParser(description="Bell test laboratory: simulate, analyze, optimize, compare")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=False):
        p.add_argument("--config", help="flat section.key = value configuration file")
        p.add_argument("--seed", type=int, help="overrides run.seed")
        p.add_argument("--out", help="output directory (default: $BELL_LAB_OUT or ./out)")
        if threads:
            p.add_argument("--threads", type=int, help="overrides run.threads")

    common(sub.add_parser("simulate", help="simulate a run into an event log"), threads=True)

    analyze = sub.add_parser("analyze", help="analyze an event log")
    analyze.add_argument("log", help="event log CSV")
    common(analyze)

    oracle = sub.add_parser("oracle", help="run an optimizer over a grid")
    oracle.add_argument("task", choices=ORACLE_TASKS)
    common(oracle)

    report = sub.add_parser("report", help="merge key=value reports")
    report.add_argument("reports", nargs="*", help="report .kv files")
    report.add_argument("--out", help="directory for comparison.txt")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "oracle": cmd_oracle,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ReportError, SettingReplayError, AdversaryError, DomainError) as e:
        print(f"Error: {e}")
        return EXIT_USAGE
    except (OSError, LogWriteError, LogParseError, LogValidationError) as e:
        print(f"Error reading or writing files: {e}")
        return EXIT_IO
    except Exception as e:
        print(f"Error: internal failure: {e}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
