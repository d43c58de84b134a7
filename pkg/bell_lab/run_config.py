"""
Run configuration: flat `section.key = value` files.

CONFIG_SCHEMA mirrors documentation/config_schema.md. Every problem is
raised as ConfigError carrying the dotted field path.
"""

import hashlib
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

from bell_lab import BellLabError, ConfigError, StrategyError
from bell_lab.channel_model import ChannelConfig, RemovedBehavior
from bell_lab.coincidence import CoincidencePolicy, PolicyKind, ch_compatible_windows
from bell_lab.correlation_table import EXCLUDE, parse_nodetect_value
from bell_lab.event_model import Mode
from bell_lab.experiment import ExperimentConfig
from bell_lab.pair_source import LhvKind, LhvStrategy, QuantumKind, QuantumPairModel, load_strategy_table
from bell_lab.setting_source import SettingKind, SettingStrategy, parse_setting_token

PROJECT_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = PROJECT_ROOT / "configs"
OUT_ENV_VAR = "BELL_LAB_OUT"
DEFAULT_OUT_DIR = PROJECT_ROOT / "out"

LINE_PATTERN = re.compile(r"^([a-z_]+\.[a-z_0-9]+)\s*=\s*(.*?)\s*$")
# 3pi/4, -pi/2, 3*pi/8, pi, 0.25pi
PI_PATTERN = re.compile(r"^([+-]?)(\d*\.?\d*)\s*\*?\s*pi(?:\s*/\s*(\d+(?:\.\d+)?))?$")

INEQUALITIES = (
    "chsh",
    "bell_original",
    "ch",
    "ch_counts",
    "ch_coincidence",
    "rate_chsh",
    "no_enhancement",
    "no_enhancement_chsh",
    "chained",
    "symmetric_chsh",
)
ORACLE_TASKS = ("efficiency-curve", "coincidence-curve", "eberhard")
REQUIRED = object()


def parse_angle(text):
    """Radians from a float literal or a multiple of pi."""
    text = text.strip()
    match = PI_PATTERN.match(text)
    if match:
        sign, factor, divisor = match.groups()
        value = (float(factor) if factor else 1.0) * math.pi / (float(divisor) if divisor else 1.0)
        return -value if sign == "-" else value
    return float(text)


def parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _angles(text):
    return tuple(parse_angle(token) for token in text.split())


def _settings(text):
    return tuple(parse_setting_token(token) for token in text.split())


def _floats(text):
    return tuple(float(token) for token in text.split())


def _words(text):
    return tuple(text.split())


def _choice(*allowed):
    def parse(text):
        if text not in allowed:
            raise ValueError(f"must be one of {', '.join(allowed)}, got {text!r}")
        return text

    return parse


def _optional_float(text):
    return None if text.strip() in ("", "none") else float(text)


@dataclass(frozen=True)
class Field:
    parse: Callable[[str], Any]
    default: Any
    help: str


SOURCE_KINDS = tuple(k.value for k in QuantumKind) + tuple(k.value for k in LhvKind)

CONFIG_SCHEMA: Dict[str, Field] = {
    "run.seed": Field(int, REQUIRED, "64-bit seed; mandatory"),
    "run.trials": Field(int, 100_000, "number of trials"),
    "run.mode": Field(_choice("slotted", "continuous"), "slotted", "trial ids recorded or not"),
    "run.trial_period_ns": Field(int, 1000, "ticks between emissions"),
    "run.tick_ns": Field(int, 1, "nanoseconds per tick"),
    "run.threads": Field(int, 1, "worker threads"),
    "run.chunk_trials": Field(int, 200_000, "trials per work item"),
    "source.kind": Field(_choice(*SOURCE_KINDS), "singlet", "pair source"),
    "source.angles_a": Field(_angles, (), "analyzer angles or phases of A, one per setting"),
    "source.angles_b": Field(_angles, (), "analyzer angles or phases of B"),
    "source.schmidt_angle": Field(parse_angle, math.pi / 4, "two_qubit state angle r in [0, pi/4]"),
    "source.long_path_delay": Field(int, 5, "franson long-arm delay in ticks"),
    "source.table": Field(str, None, "strategy table file for table and delay_table"),
    "source.assumed_pattern_a": Field(_settings, (1, 2), "A's pattern as assumed by B's memory"),
    "source.assumed_pattern_b": Field(_settings, (1, 2), "B's pattern as assumed by A's memory"),
    "settings.kind": Field(_choice(*(k.value for k in SettingKind)), "iid_uniform", "setting strategy"),
    "settings.arity": Field(int, 2, "settings per side"),
    "settings.choices_a": Field(_settings, (), "values drawn by iid_uniform on A"),
    "settings.choices_b": Field(_settings, (), "values drawn by iid_uniform on B"),
    "settings.pattern_a": Field(_settings, (), "periodic pattern of A"),
    "settings.pattern_b": Field(_settings, (), "periodic pattern of B"),
    "settings.replay_a": Field(str, None, "trial,setting CSV of A"),
    "settings.replay_b": Field(str, None, "trial,setting CSV of B"),
    "settings.stream": Field(int, 0, "setting stream offset"),
    "channel.eta_a": Field(float, 1.0, "detection probability of A"),
    "channel.eta_b": Field(float, 1.0, "detection probability of B"),
    "channel.eta_a_minus": Field(_optional_float, None, "A's -1 channel efficiency"),
    "channel.eta_b_minus": Field(_optional_float, None, "B's -1 channel efficiency"),
    "channel.dark_rate": Field(float, 0.0, "dark counts per second per detector"),
    "channel.jitter_sigma": Field(float, 0.0, "timing jitter in ticks"),
    "channel.removed_behavior": Field(_choice(*(b.value for b in RemovedBehavior)), "count", "REMOVED analyzer"),
    "coincidence.policy": Field(_choice(*(k.value for k in PolicyKind)), "trial", "pairing rule"),
    "coincidence.window": Field(float, 10.0, "window width tau in ticks"),
    "coincidence.slot_len": Field(int, 0, "slot length; 0 means the trial period"),
    "coincidence.origin": Field(int, 0, "slot origin"),
    "coincidence.windows": Field(_floats, (), "asymmetric widths for 11 12 21 22"),
    "coincidence.ch_compatible": Field(parse_bool, False, "nesting asymmetric widths"),
    "coincidence.tolerance": Field(int, 0, "herald tolerance in ticks; 0 means half a period"),
    "analysis.inequalities": Field(_words, ("chsh",), "evaluators to run"),
    "analysis.nodetect": Field(parse_nodetect_value, EXCLUDE, "0, -1 or exclude"),
    "analysis.chain_terms": Field(int, 6, "chained inequality length"),
    "analysis.event_ready_eta": Field(_optional_float, None, "efficiency for the event-ready bound"),
    "analysis.franson": Field(parse_bool, False, "franson geometry holds"),
    "analysis.subtract_accidentals": Field(parse_bool, False, "also report subtracted tables"),
    "analysis.subsamples": Field(int, 0, "coarse-grained subsamples; 0 disables"),
    "oracle.points": Field(int, 20, "grid points"),
    "oracle.grid_start": Field(float, 0.5, "first grid value"),
    "oracle.grid_stop": Field(float, 1.0, "last grid value"),
    "oracle.delay_slots": Field(int, 6, "delay slots d"),
    "oracle.window_slots": Field(int, 1, "window w in slots"),
    "oracle.slot_ticks": Field(int, 1, "ticks per delay slot"),
    "oracle.starts": Field(int, 64, "multi-start count"),
    "output.dir": Field(str, None, "output directory"),
    "output.log": Field(str, "events.csv", "event log file name"),
    "output.report": Field(str, "report.txt", "report file name"),
}


@dataclass(frozen=True)
class RunConfig:
    values: Dict[str, Any]
    path: Optional[Path] = None
    text: str = ""

    def __getitem__(self, key):
        return self.values[key]

    @property
    def digest(self):
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    @property
    def out_dir(self):
        if self.values.get("output.dir"):
            return Path(self.values["output.dir"])
        return Path(os.environ.get(OUT_ENV_VAR, DEFAULT_OUT_DIR))

    def with_overrides(self, **overrides):
        values = dict(self.values)
        for key, value in overrides.items():
            if value is not None:
                values[key] = value
        return RunConfig(values, self.path, self.text)


def parse_config_text(text, path=None, require_seed=True):
    """Typed values of every schema key, defaults filled in."""
    raw = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        match = LINE_PATTERN.match(stripped)
        if not match:
            raise ConfigError(f"line {number}", f"expected `section.key = value`, got {line.strip()!r}")
        key, value = match.groups()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(key, "unknown key")
        if key in raw:
            raise ConfigError(key, f"set twice (line {number})")
        raw[key] = value

    values = {}
    for key, entry in CONFIG_SCHEMA.items():
        if key not in raw:
            if entry.default is REQUIRED:
                if require_seed:
                    raise ConfigError(key, "is mandatory")
                values[key] = None
            else:
                values[key] = entry.default
            continue
        try:
            values[key] = entry.parse(raw[key])
        except ValueError as e:
            raise ConfigError(key, str(e)) from None
    return RunConfig(values, path, text)


def load_config(path, require_seed=True):
    path = Path(path)
    with open(path, "r") as f:
        text = f.read()
    return parse_config_text(text, path, require_seed)


def _resolve(cfg, relative):
    if relative is None:
        return None
    candidate = Path(relative)
    if not candidate.is_absolute() and cfg.path is not None:
        candidate = cfg.path.parent / candidate
    return candidate


def build_settings(cfg):
    kind = SettingKind(cfg["settings.kind"])
    try:
        return SettingStrategy(
            kind=kind,
            arity=cfg["settings.arity"],
            choices_a=cfg["settings.choices_a"],
            choices_b=cfg["settings.choices_b"],
            pattern_a=cfg["settings.pattern_a"],
            pattern_b=cfg["settings.pattern_b"],
            replay_a=_resolve(cfg, cfg["settings.replay_a"]),
            replay_b=_resolve(cfg, cfg["settings.replay_b"]),
            stream=cfg["settings.stream"],
        )
    except StrategyError as e:
        raise ConfigError("settings.kind", str(e)) from None


def build_source(cfg):
    kind = cfg["source.kind"]
    try:
        if kind in {k.value for k in QuantumKind}:
            return QuantumPairModel(QuantumKind(kind), cfg["source.schmidt_angle"], cfg["source.long_path_delay"])
        table = None
        if LhvKind(kind) in (LhvKind.TABLE, LhvKind.DELAY_TABLE):
            if cfg["source.table"] is None:
                raise ConfigError("source.table", f"is mandatory for source.kind = {kind}")
            table = load_strategy_table(_resolve(cfg, cfg["source.table"]))
        return LhvStrategy(
            LhvKind(kind),
            cfg["source.angles_a"],
            cfg["source.angles_b"],
            table,
            cfg["source.assumed_pattern_a"],
            cfg["source.assumed_pattern_b"],
        )
    except StrategyError as e:
        raise ConfigError("source.kind", str(e)) from None
    except OSError as e:
        raise ConfigError("source.table", f"cannot read strategy table: {e}") from None


def build_channel(cfg):
    return ChannelConfig(
        eta_a=cfg["channel.eta_a"],
        eta_b=cfg["channel.eta_b"],
        eta_a_minus=cfg["channel.eta_a_minus"],
        eta_b_minus=cfg["channel.eta_b_minus"],
        dark_rate=cfg["channel.dark_rate"],
        jitter_sigma=cfg["channel.jitter_sigma"],
        removed_behavior=RemovedBehavior(cfg["channel.removed_behavior"]),
    )


def build_experiment(cfg):
    """ExperimentConfig of a run configuration."""
    return ExperimentConfig(
        source=build_source(cfg),
        settings=build_settings(cfg),
        trials=cfg["run.trials"],
        seed=cfg["run.seed"],
        angles_a=cfg["source.angles_a"],
        angles_b=cfg["source.angles_b"],
        channel=build_channel(cfg),
        mode=Mode(cfg["run.mode"]),
        period=cfg["run.trial_period_ns"],
        tick_ns=cfg["run.tick_ns"],
        threads=cfg["run.threads"],
        chunk_trials=cfg["run.chunk_trials"],
    )


def build_policy(cfg, period=None):
    """CoincidencePolicy of the coincidence block; `period` fills slot and tolerance defaults."""
    kind = PolicyKind(cfg["coincidence.policy"])
    tau = cfg["coincidence.window"]
    slot_len = cfg["coincidence.slot_len"]
    tolerance = cfg["coincidence.tolerance"]
    if kind is PolicyKind.SLOTS and slot_len == 0:
        if period is None:
            raise ConfigError("coincidence.slot_len", "needed when the log records no trial period")
        slot_len = period
    if kind is PolicyKind.HERALDED and tolerance == 0 and period is not None:
        tolerance = period // 2 - 1
    windows = {}
    if kind is PolicyKind.ASYMMETRIC:
        widths = cfg["coincidence.windows"]
        if not widths:
            windows = ch_compatible_windows(tau)
        elif len(widths) != 4:
            raise ConfigError("coincidence.windows", f"needs 4 widths (11 12 21 22), got {len(widths)}")
        else:
            windows = dict(zip(((1, 1), (1, 2), (2, 1), (2, 2)), widths))
    try:
        return CoincidencePolicy(
            kind,
            window=tau,
            slot_len=slot_len,
            origin=cfg["coincidence.origin"],
            windows=windows,
            tolerance=tolerance,
            ch_compatible=cfg["coincidence.ch_compatible"],
        )
    except ValueError as e:
        raise ConfigError(f"coincidence.{'windows' if windows else 'policy'}", str(e)) from None


@dataclass(frozen=True)
class AnalysisOptions:
    inequalities: Tuple[str, ...] = ("chsh",)
    nodetect_value: Any = EXCLUDE
    chain_terms: int = 6
    event_ready_eta: Optional[float] = None
    franson: bool = False
    subtract_accidentals: bool = False
    subsamples: int = 0


def build_analysis(cfg):
    unknown = [name for name in cfg["analysis.inequalities"] if name not in INEQUALITIES]
    if unknown:
        raise ConfigError("analysis.inequalities", f"unknown inequality {unknown[0]!r}")
    eta = cfg["analysis.event_ready_eta"]
    if eta is not None and not 0 < eta <= 1:
        raise ConfigError("analysis.event_ready_eta", f"must lie in (0, 1], got {eta}")
    if cfg["analysis.subsamples"] == 1 or cfg["analysis.subsamples"] < 0:
        raise ConfigError("analysis.subsamples", "must be 0 or at least 2")
    return AnalysisOptions(
        inequalities=cfg["analysis.inequalities"],
        nodetect_value=cfg["analysis.nodetect"],
        chain_terms=cfg["analysis.chain_terms"],
        event_ready_eta=eta,
        franson=cfg["analysis.franson"],
        subtract_accidentals=cfg["analysis.subtract_accidentals"],
        subsamples=cfg["analysis.subsamples"],
    )


def validate_config(cfg):
    """Build every block once so that a bad field fails before any work starts."""
    try:
        build_experiment(cfg)
        build_policy(cfg, cfg["run.trial_period_ns"])
        build_analysis(cfg)
    except ConfigError:
        raise
    except BellLabError as e:
        raise ConfigError("config", str(e)) from None
