"""
Trial loop: settings, source, local responses and channel, emitted as an
event log.

Trials are generated in chunks; every random quantity is keyed on
(seed, stream, trial id), so the log does not depend on the chunk size
or on how many threads share the work. Memory strategies see earlier
remote settings and therefore run trial by trial.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np
import pandas as pd

from bell_lab import ConfigError
from bell_lab.channel_model import ChannelConfig, apply_channel_batch, inject_dark_counts
from bell_lab.event_model import (
    EVENT_COLUMNS,
    NO_TRIAL,
    REMOVED,
    EventLog,
    LogHeader,
    Mode,
    Site,
    empty_events,
    sort_events,
)
from bell_lab.keyed_random import Stream, keyed_uniforms
from bell_lab.pair_source import (
    LhvKind,
    LhvStrategy,
    QuantumKind,
    QuantumPairModel,
    ResponseBatch,
    TrialHistory,
    draw_lambdas,
    franson_outcomes,
    lhv_respond,
    lhv_respond_batch,
    memory_prediction,
    singlet_outcomes,
    two_qubit_outcomes,
)
from bell_lab.setting_source import SettingStrategy, settings_for_trials

CHUNK_TRIALS = 200_000
DEFAULT_PERIOD = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    source: Union[QuantumPairModel, LhvStrategy]
    settings: SettingStrategy
    trials: int
    seed: int
    angles_a: Tuple[float, ...] = ()
    angles_b: Tuple[float, ...] = ()
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    mode: Mode = Mode.SLOTTED
    period: int = DEFAULT_PERIOD
    tick_ns: int = 1
    threads: int = 1
    chunk_trials: int = CHUNK_TRIALS

    def __post_init__(self):
        arity = self.settings.arity
        if self.trials < 1:
            raise ConfigError("run.trials", f"must be positive, got {self.trials}")
        if self.period < 2:
            raise ConfigError("run.trial_period_ns", f"must be at least 2, got {self.period}")
        if self.threads < 1:
            raise ConfigError("run.threads", f"must be positive, got {self.threads}")
        if Mode(self.mode) is Mode.SLOTTED and self.channel.dark_rate > 0:
            raise ConfigError("channel.dark_rate", "dark counts need run.mode = continuous")

        uses_angles = self.is_quantum or self.source.kind in (LhvKind.SIGN_MODEL, LhvKind.MEMORY_PR)
        if uses_angles:
            for name in ("angles_a", "angles_b"):
                if len(getattr(self, name)) < arity:
                    raise ConfigError(f"source.{name}", f"needs {arity} angles, got {len(getattr(self, name))}")
        if not self.is_quantum and self.source.table is not None and self.source.table.arity < arity:
            raise ConfigError("source.table", f"table covers {self.source.table.arity} settings, run needs {arity}")

        if self.is_quantum and self.source.kind is QuantumKind.FRANSON:
            used = set()
            for site in (Site.A, Site.B):
                used |= set(self.settings.choices(site)) | set(self.settings.pattern(site))
            if REMOVED in used:
                raise ConfigError("source.kind", "franson sources cannot run with REMOVED analyzers")

        if self.max_delay >= self.period // 2:
            raise ConfigError(
                "run.trial_period_ns",
                f"detection delays up to {self.max_delay} do not fit in half a trial period",
            )

    @property
    def is_quantum(self):
        return isinstance(self.source, QuantumPairModel)

    @property
    def arity(self):
        return self.settings.arity

    @property
    def max_delay(self):
        delay = self.channel.latency * 2
        if self.is_quantum and self.source.kind is QuantumKind.FRANSON:
            delay += self.source.long_path_delay
        elif not self.is_quantum and self.source.kind is LhvKind.DELAY_TABLE:
            table = self.source.table
            delay += int(max(table.slot_a.max(), table.slot_b.max())) * table.slot_ticks
        return delay

    @property
    def source_name(self):
        return self.source.kind.value

    def emission_times(self, trial_ids):
        return np.asarray(trial_ids, dtype=np.int64) * self.period + self.period // 2


def _angles_for(angles, settings):
    """Analyzer angle per trial; REMOVED trials get 0 and are overridden later."""
    table = np.concatenate(([0.0], np.asarray(angles, dtype=np.float64)))
    return table[np.asarray(settings, dtype=np.int64)]


def _quantum_responses(cfg, trial_ids, a_set, b_set):
    model = cfg.source
    a_angle = _angles_for(cfg.angles_a, a_set)
    b_angle = _angles_for(cfg.angles_b, b_set)
    u_a = keyed_uniforms(cfg.seed, Stream.QUANTUM_A, trial_ids)
    delay_a = np.zeros(len(trial_ids), dtype=np.int64)
    delay_b = np.zeros(len(trial_ids), dtype=np.int64)
    if model.kind is QuantumKind.SINGLET:
        u_b = keyed_uniforms(cfg.seed, Stream.QUANTUM_B, trial_ids)
        outcome_a, outcome_b = singlet_outcomes(a_angle, b_angle, u_a, u_b)
    elif model.kind is QuantumKind.TWO_QUBIT:
        outcome_a, outcome_b = two_qubit_outcomes(model.schmidt_angle, a_angle, b_angle, u_a)
    else:
        u_b = keyed_uniforms(cfg.seed, Stream.QUANTUM_B, trial_ids)
        u_path = keyed_uniforms(cfg.seed, Stream.PATH, trial_ids)
        outcome_a, outcome_b, arm_a, arm_b = franson_outcomes(a_angle, b_angle, u_a, u_b, u_path)
        delay_a = arm_a.astype(np.int64) * model.long_path_delay
        delay_b = arm_b.astype(np.int64) * model.long_path_delay

    # A removed analyzer passes every photon: a +1 count
    outcome_a = np.where(np.asarray(a_set) == REMOVED, 1, outcome_a)
    outcome_b = np.where(np.asarray(b_set) == REMOVED, 1, outcome_b)
    ones = np.ones(len(trial_ids), dtype=bool)
    return (
        ResponseBatch(outcome_a.astype(np.int8), ones, delay_a),
        ResponseBatch(outcome_b.astype(np.int8), ones.copy(), delay_b),
    )


def _lhv_responses(cfg, trial_ids, a_set, b_set):
    lams = draw_lambdas(cfg.source, cfg.seed, trial_ids)
    return (
        lhv_respond_batch(cfg.source, lams, a_set, Site.A),
        lhv_respond_batch(cfg.source, lams, b_set, Site.B),
    )


def _events_frame(cfg, trial_ids, settings, batches):
    """Event rows of detected responses for both sites."""
    frames = []
    emitted = cfg.emission_times(trial_ids)
    for site in (Site.A, Site.B):
        channel_batch = apply_channel_batch(batches[site], settings[site], cfg.channel, site, cfg.seed, trial_ids)
        keep = channel_batch.detected
        n = int(keep.sum())
        trial_column = trial_ids[keep] if Mode(cfg.mode) is Mode.SLOTTED else np.full(n, NO_TRIAL)
        frames.append(
            pd.DataFrame(
                {
                    "site": np.full(n, int(site)),
                    "trial": trial_column,
                    "time_ns": emitted[keep] + channel_batch.delay[keep],
                    "setting": np.asarray(settings[site])[keep],
                    "channel": channel_batch.outcome[keep],
                },
                columns=EVENT_COLUMNS,
            )
        )
    return pd.concat(frames, ignore_index=True)


def _generate_chunk(cfg, start, stop):
    trial_ids = np.arange(start, stop, dtype=np.int64)
    a_set, b_set = settings_for_trials(cfg.settings, trial_ids, cfg.seed)
    if cfg.is_quantum:
        batch_a, batch_b = _quantum_responses(cfg, trial_ids, a_set, b_set)
    else:
        batch_a, batch_b = _lhv_responses(cfg, trial_ids, a_set, b_set)
    return _events_frame(cfg, trial_ids, {Site.A: a_set, Site.B: b_set}, {Site.A: batch_a, Site.B: batch_b})


def _generate_with_memory(cfg):
    """Sequential trial loop for strategies that see earlier remote settings."""
    trial_ids = np.arange(cfg.trials, dtype=np.int64)
    a_set, b_set = settings_for_trials(cfg.settings, trial_ids, cfg.seed)
    lams = draw_lambdas(cfg.source, cfg.seed, trial_ids)
    responses = {Site.A: [], Site.B: []}
    fallback = 0
    for k in range(cfg.trials):
        history_a = TrialHistory(k, b_set[:k])
        history_b = TrialHistory(k, a_set[:k])
        if memory_prediction(cfg.source, Site.A, history_a) is None or memory_prediction(cfg.source, Site.B, history_b) is None:
            fallback += 1
        responses[Site.A].append(lhv_respond(cfg.source, lams[k], int(a_set[k]), Site.A, history_a))
        responses[Site.B].append(lhv_respond(cfg.source, lams[k], int(b_set[k]), Site.B, history_b))

    batches = {
        site: ResponseBatch(
            np.array([r.outcome for r in rows], dtype=np.int8),
            np.array([r.detected for r in rows], dtype=bool),
            np.array([r.delay for r in rows], dtype=np.int64),
        )
        for site, rows in responses.items()
    }
    frame = _events_frame(cfg, trial_ids, {Site.A: a_set, Site.B: b_set}, batches)
    return frame, fallback


def _header(cfg, extras):
    entries = dict(cfg.settings.to_header())
    entries.update(
        {
            "run.trials": cfg.trials,
            "run.trial_period_ns": cfg.period,
            "run.duration_ns": cfg.trials * cfg.period,
            "source.kind": cfg.source_name,
            "channel.eta_a": cfg.channel.eta_a,
            "channel.eta_b": cfg.channel.eta_b,
            "channel.dark_rate": cfg.channel.dark_rate,
            "channel.jitter_sigma": cfg.channel.jitter_sigma,
        }
    )
    if cfg.angles_a:
        entries["source.angles_a"] = " ".join(repr(float(x)) for x in cfg.angles_a)
        entries["source.angles_b"] = " ".join(repr(float(x)) for x in cfg.angles_b)
    if cfg.is_quantum:
        entries["source.schmidt_angle"] = cfg.source.schmidt_angle
        if cfg.source.kind is QuantumKind.FRANSON:
            entries["source.long_path_delay"] = cfg.source.long_path_delay
    entries.update(extras)
    return LogHeader(
        mode=Mode(cfg.mode),
        arity=cfg.arity,
        tick_ns=cfg.tick_ns,
        seed=cfg.seed,
        source=cfg.source_name,
    ).with_extras(entries)


def run_experiment(cfg):
    """Simulate cfg.trials trials and return the event log."""
    extras = {}
    if not cfg.is_quantum and cfg.source.has_memory:
        frame, fallback = _generate_with_memory(cfg)
        extras["memory.fallback_trials"] = fallback
    else:
        bounds = [
            (start, min(cfg.trials, start + cfg.chunk_trials))
            for start in range(0, cfg.trials, cfg.chunk_trials)
        ]
        if cfg.threads > 1 and len(bounds) > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                chunks = list(pool.map(lambda b: _generate_chunk(cfg, *b), bounds))
        else:
            chunks = [_generate_chunk(cfg, start, stop) for start, stop in bounds]
        frame = pd.concat(chunks, ignore_index=True) if chunks else empty_events()

    log = EventLog(_header(cfg, extras), sort_events(frame))
    if cfg.channel.dark_rate > 0:
        log = inject_dark_counts(log, cfg.channel, cfg.seed)
    return log
