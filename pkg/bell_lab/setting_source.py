"""
Measurement-setting sequences: random, periodic and replayed.
"""

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from bell_lab import SettingReplayError, StrategyError
from bell_lab.event_model import REMOVED, Site
from bell_lab.keyed_random import Stream, keyed_uniforms

# Stream ids of different setting strategies sharing one seed stay apart
STREAM_OFFSET_STEP = 100


class SettingKind(str, Enum):
    IID_UNIFORM = "iid_uniform"
    PERIODIC = "periodic"
    FILE_REPLAY = "file_replay"


def parse_setting_token(token):
    """`inf` is the REMOVED analyzer, anything else a 1-based index."""
    token = str(token).strip()
    if token == "inf":
        return REMOVED
    return int(token)


def format_setting_token(setting):
    return "inf" if setting == REMOVED else str(int(setting))


@dataclass(frozen=True)
class SettingStrategy:
    kind: SettingKind
    arity: int = 2
    # Values drawn by IID_UNIFORM; empty means 1..arity
    choices_a: Tuple[int, ...] = ()
    choices_b: Tuple[int, ...] = ()
    pattern_a: Tuple[int, ...] = ()
    pattern_b: Tuple[int, ...] = ()
    replay_a: Optional[Path] = None
    replay_b: Optional[Path] = None
    stream: int = 0

    def __post_init__(self):
        if self.arity < 1:
            raise StrategyError(f"arity must be positive, got {self.arity}")
        allowed = set(range(1, self.arity + 1)) | {REMOVED}
        for name in ("choices_a", "choices_b", "pattern_a", "pattern_b"):
            bad = [s for s in getattr(self, name) if s not in allowed]
            if bad:
                raise StrategyError(f"{name} holds setting {bad[0]} outside 1..{self.arity}")
        if self.kind is SettingKind.PERIODIC and not (self.pattern_a and self.pattern_b):
            raise StrategyError("periodic settings need a nonempty pattern per side")
        if self.kind is SettingKind.FILE_REPLAY and not (self.replay_a and self.replay_b):
            raise StrategyError("file replay needs a replay file per side")

    def choices(self, site):
        chosen = self.choices_a if Site(site) is Site.A else self.choices_b
        return chosen or tuple(range(1, self.arity + 1))

    def pattern(self, site):
        return self.pattern_a if Site(site) is Site.A else self.pattern_b

    def is_predictable(self):
        return self.kind is SettingKind.PERIODIC

    def to_header(self):
        """Header entries that let an analysis rebuild the schedule."""
        entries = {
            "settings.kind": self.kind.value,
            "settings.stream": self.stream,
        }
        if self.kind is SettingKind.IID_UNIFORM:
            entries["settings.choices_a"] = " ".join(map(format_setting_token, self.choices(Site.A)))
            entries["settings.choices_b"] = " ".join(map(format_setting_token, self.choices(Site.B)))
        elif self.kind is SettingKind.PERIODIC:
            entries["settings.pattern_a"] = " ".join(map(format_setting_token, self.pattern_a))
            entries["settings.pattern_b"] = " ".join(map(format_setting_token, self.pattern_b))
        else:
            entries["settings.replay_a"] = str(self.replay_a)
            entries["settings.replay_b"] = str(self.replay_b)
        return entries


def _tokens(text):
    return tuple(parse_setting_token(token) for token in text.split())


def strategy_from_header(header):
    """Rebuild the setting strategy recorded in a log header, or None."""
    extras = header.extras
    if "settings.kind" not in extras:
        return None
    kind = SettingKind(extras["settings.kind"])
    return SettingStrategy(
        kind=kind,
        arity=header.arity,
        choices_a=_tokens(extras.get("settings.choices_a", "")),
        choices_b=_tokens(extras.get("settings.choices_b", "")),
        pattern_a=_tokens(extras.get("settings.pattern_a", "")),
        pattern_b=_tokens(extras.get("settings.pattern_b", "")),
        replay_a=Path(extras["settings.replay_a"]) if "settings.replay_a" in extras else None,
        replay_b=Path(extras["settings.replay_b"]) if "settings.replay_b" in extras else None,
        stream=int(extras.get("settings.stream", "0")),
    )


@lru_cache(maxsize=16)
def load_replay_file(path):
    """Read a `trial,setting` CSV into sorted (trials, settings) arrays."""
    frame = pd.read_csv(path, dtype={"trial": np.int64, "setting": str})
    frame = frame.sort_values("trial", kind="mergesort")
    if frame["trial"].duplicated().any():
        raise StrategyError(f"{path}: duplicate trial ids")
    settings = np.array([parse_setting_token(s) for s in frame["setting"]], dtype=np.int64)
    return frame["trial"].to_numpy(), settings


def _replayed(path, trial_ids):
    trials, settings = load_replay_file(str(path))
    positions = np.searchsorted(trials, trial_ids)
    inside = positions < len(trials)
    found = np.zeros(len(trial_ids), dtype=bool)
    found[inside] = trials[positions[inside]] == trial_ids[inside]
    if not found.all():
        missing = int(trial_ids[np.flatnonzero(~found)[0]])
        raise SettingReplayError(missing, f"replay file {path} has no setting for this trial")
    return settings[positions]


def _side_settings(strategy, site, trial_ids, seed):
    if strategy.kind is SettingKind.IID_UNIFORM:
        choices = np.asarray(strategy.choices(site), dtype=np.int64)
        stream = Stream.SETTING_A if Site(site) is Site.A else Stream.SETTING_B
        stream_id = int(stream) + STREAM_OFFSET_STEP * strategy.stream
        draws = keyed_uniforms(seed, stream_id, trial_ids)
        picks = np.minimum((draws * len(choices)).astype(np.int64), len(choices) - 1)
        return choices[picks]
    if strategy.kind is SettingKind.PERIODIC:
        pattern = np.asarray(strategy.pattern(site), dtype=np.int64)
        return pattern[trial_ids % len(pattern)]
    path = strategy.replay_a if Site(site) is Site.A else strategy.replay_b
    return _replayed(path, trial_ids)


def settings_for_trials(strategy, trial_ids, seed):
    """Setting arrays (a, b) for an array of trial ids."""
    trial_ids = np.asarray(trial_ids, dtype=np.int64)
    if len(trial_ids) and trial_ids.min() < 0:
        raise ValueError("trial ids must be nonnegative")
    return (
        _side_settings(strategy, Site.A, trial_ids, seed),
        _side_settings(strategy, Site.B, trial_ids, seed),
    )


def settings_for_trial(strategy, trial_id, seed):
    """Setting pair (a_index, b_index) of one trial."""
    if trial_id < 0:
        raise ValueError(f"trial_id must be nonnegative, got {trial_id}")
    a, b = settings_for_trials(strategy, np.array([trial_id]), seed)
    return int(a[0]), int(b[0])
