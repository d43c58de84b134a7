"""
Which settings were in force when: the trial schedule recorded in a log
header, or a hold timeline rebuilt from the events themselves.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from bell_lab.event_model import Site
from bell_lab.setting_source import SettingStrategy, settings_for_trials, strategy_from_header

COUNT_CHUNK = 1_000_000


@dataclass(frozen=True)
class Schedule:
    """Trials 0..trials-1, trial k emitted at k * period + period // 2."""

    strategy: SettingStrategy
    seed: int
    trials: int
    period: int

    def settings(self, trial_ids):
        return settings_for_trials(self.strategy, trial_ids, self.seed)

    def trial_of(self, times):
        return np.clip(np.asarray(times) // self.period, 0, self.trials - 1)

    def trial_counts(self, arity):
        """Number of trials per setting pair, indexed [a_setting, b_setting]."""
        counts = np.zeros((arity + 1, arity + 1), dtype=np.int64)
        for start in range(0, self.trials, COUNT_CHUNK):
            trial_ids = np.arange(start, min(self.trials, start + COUNT_CHUNK))
            a, b = self.settings(trial_ids)
            np.add.at(counts, (a, b), 1)
        return counts


def schedule_from_header(header) -> Optional[Schedule]:
    strategy = strategy_from_header(header)
    extras = header.extras
    if strategy is None or header.seed is None:
        return None
    if "run.trials" not in extras or "run.trial_period_ns" not in extras:
        return None
    return Schedule(
        strategy,
        header.seed,
        int(extras["run.trials"]),
        int(extras["run.trial_period_ns"]),
    )


def _hold(stream, times):
    """Setting of the latest event at or before each time (first event's before that)."""
    if len(stream) == 0:
        return np.ones(len(times), dtype=np.int64)
    positions = np.searchsorted(stream.time, times, side="right") - 1
    return stream.setting[np.clip(positions, 0, len(stream) - 1)].astype(np.int64)


def settings_at(log, site, times, schedule=None):
    """Setting of `site` at each time."""
    times = np.asarray(times, dtype=np.int64)
    if schedule is not None:
        a, b = schedule.settings(schedule.trial_of(times))
        return a if Site(site) is Site.A else b
    return _hold(log.stream(site), times)


def log_duration(log):
    extras = log.header.extras
    if "run.duration_ns" in extras:
        return int(extras["run.duration_ns"])
    if len(log) == 0:
        return 0
    return int(log.events["time_ns"].max()) + 1


def pair_exposure(log, schedule=None):
    """Joint duty time in ns of every setting pair, indexed [a_setting, b_setting]."""
    arity = log.header.arity
    if schedule is not None:
        return schedule.trial_counts(arity).astype(np.float64) * schedule.period

    exposure = np.zeros((arity + 1, arity + 1))
    duration = log_duration(log)
    if duration == 0:
        return exposure
    stream_a = log.stream(Site.A)
    stream_b = log.stream(Site.B)
    edges = np.unique(np.concatenate(([0], stream_a.time, stream_b.time, [duration])))
    edges = edges[edges <= duration]
    starts = edges[:-1]
    lengths = np.diff(edges).astype(np.float64)
    np.add.at(exposure, (_hold(stream_a, starts), _hold(stream_b, starts)), lengths)
    return exposure
