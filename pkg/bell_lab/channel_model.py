"""
Detector channels: efficiency, timing jitter, dark counts, and the
accidental-coincidence estimate and subtraction built on them.
"""

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import ndtri

from bell_lab import AccidentalsError, ConfigError, DomainError, warn
from bell_lab.event_model import EVENT_COLUMNS, NO_TRIAL, REMOVED, EventLog, Mode, Site, sort_events
from bell_lab.keyed_random import Stream, keyed_generator, keyed_uniforms
from bell_lab.pair_source import LocalResponse, ResponseBatch
from bell_lab.schedule import log_duration, pair_exposure, schedule_from_header, settings_at

NS_PER_SECOND = 1e9
# Jitter draws are clipped at this many sigmas so delays stay nonnegative
JITTER_CLIP_SIGMAS = 6
SUBTRACTED_FLAG = "accidentals subtracted"


class RemovedBehavior(str, Enum):
    COUNT = "count"
    LOSSLESS = "lossless"


@dataclass(frozen=True)
class ChannelConfig:
    eta_a: float = 1.0
    eta_b: float = 1.0
    # Efficiency of the -1 channel; None means the same as the +1 channel
    eta_a_minus: Optional[float] = None
    eta_b_minus: Optional[float] = None
    dark_rate: float = 0.0
    jitter_sigma: float = 0.0
    removed_behavior: str = RemovedBehavior.COUNT

    def __post_init__(self):
        for name in ("eta_a", "eta_b", "eta_a_minus", "eta_b_minus"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ConfigError(f"channel.{name}", f"must lie in [0, 1], got {value}")
        if self.dark_rate < 0:
            raise ConfigError("channel.dark_rate", f"must be nonnegative, got {self.dark_rate}")
        if self.jitter_sigma < 0:
            raise ConfigError("channel.jitter_sigma", f"must be nonnegative, got {self.jitter_sigma}")
        if self.removed_behavior not in (RemovedBehavior.COUNT, RemovedBehavior.LOSSLESS):
            raise ConfigError(
                "channel.removed_behavior",
                f"must be {RemovedBehavior.COUNT} or {RemovedBehavior.LOSSLESS}, got {self.removed_behavior}",
            )

    def efficiency(self, site, outcome=1):
        if Site(site) is Site.A:
            plus, minus = self.eta_a, self.eta_a_minus
        else:
            plus, minus = self.eta_b, self.eta_b_minus
        if outcome < 0 and minus is not None:
            return minus
        return plus

    @property
    def latency(self):
        """Fixed delay every detection carries so that jitter never goes negative."""
        return int(math.ceil(JITTER_CLIP_SIGMAS * self.jitter_sigma))

    @property
    def is_ideal(self):
        return (
            self.eta_a == 1.0
            and self.eta_b == 1.0
            and self.eta_a_minus in (None, 1.0)
            and self.eta_b_minus in (None, 1.0)
            and self.jitter_sigma == 0
        )


def _streams(site):
    if Site(site) is Site.A:
        return Stream.DETECT_A, Stream.JITTER_A
    return Stream.DETECT_B, Stream.JITTER_B


def apply_channel_batch(batch, settings, cfg, side, seed, trial_ids):
    """Channel losses and jitter for many trials of one side.

    Outcome signs of surviving detections are never changed; the REMOVED
    analyzer reports +1 and is lost like any +1 detection unless the
    channel treats it as lossless.
    """
    site = Site(side)
    settings = np.asarray(settings, dtype=np.int64)
    trial_ids = np.asarray(trial_ids, dtype=np.int64)
    detect_stream, jitter_stream = _streams(site)

    removed = settings == REMOVED
    outcome = np.where(removed, 1, batch.outcome).astype(np.int8)
    eta = np.where(outcome > 0, cfg.efficiency(site, 1), cfg.efficiency(site, -1))
    if cfg.removed_behavior == RemovedBehavior.LOSSLESS:
        eta = np.where(removed, 1.0, eta)
    survives = keyed_uniforms(seed, detect_stream, trial_ids) < eta
    detected = np.asarray(batch.detected, dtype=bool) & survives

    delay = np.asarray(batch.delay, dtype=np.int64)
    if cfg.jitter_sigma > 0:
        z = ndtri(keyed_uniforms(seed, jitter_stream, trial_ids))
        jitter = np.clip(np.rint(cfg.jitter_sigma * z), -cfg.latency, cfg.latency).astype(np.int64)
        delay = delay + cfg.latency + jitter
    return ResponseBatch(outcome, detected, delay)


def apply_channel(response, cfg, side, seed, trial_id, setting=1):
    """Channel effects on one LocalResponse."""
    batch = ResponseBatch(
        np.array([response.outcome], dtype=np.int8),
        np.array([response.detected]),
        np.array([response.delay], dtype=np.int64),
    )
    result = apply_channel_batch(batch, [setting], cfg, side, seed, [trial_id])
    return LocalResponse(int(result.outcome[0]), bool(result.detected[0]), int(result.delay[0]))


def dark_rate_per_tick(cfg, tick_ns):
    return cfg.dark_rate * tick_ns / NS_PER_SECOND


def inject_dark_counts(log, cfg, seed):
    """Superpose a Poisson process of dark counts on each site of a continuous log."""
    if Mode(log.header.mode) is not Mode.CONTINUOUS:
        raise DomainError("dark counts are only injected into continuous-mode logs")
    if cfg.dark_rate == 0:
        return log

    duration = log_duration(log)
    schedule = schedule_from_header(log.header)
    rate = dark_rate_per_tick(cfg, log.header.tick_ns)
    frames = [log.events]
    added = {}
    for site, stream in ((Site.A, Stream.DARK_A), (Site.B, Stream.DARK_B)):
        rng = keyed_generator(seed, stream)
        n = int(rng.poisson(rate * duration))
        times = np.sort(rng.integers(0, max(duration, 1), size=n))
        channels = np.where(rng.random(n) < 0.5, 1, -1)
        settings = settings_at(log, site, times, schedule)
        frames.append(
            pd.DataFrame(
                {
                    "site": np.full(n, int(site)),
                    "trial": np.full(n, NO_TRIAL),
                    "time_ns": times,
                    "setting": settings,
                    "channel": channels,
                },
                columns=EVENT_COLUMNS,
            )
        )
        added[f"dark.events_{site.label.lower()}"] = n

    merged = sort_events(pd.concat(frames, ignore_index=True))
    header = log.header.with_extras(added)
    return EventLog(header, merged)


def accidental_rate(singles_a, singles_b, tau):
    """Expected accidental coincidence rate S_A * S_B * tau (consistent units)."""
    return singles_a * singles_b * tau


@dataclass(frozen=True, eq=False)
class AccidentalEstimate:
    """Expected accidental counts per (i, j, alpha, beta), window width tau in ticks."""

    tau: float
    expected: np.ndarray
    exposure: np.ndarray
    singles_a: np.ndarray
    singles_b: np.ndarray
    tick_ns: int = 1

    def rate(self, i, j):
        """Accidental coincidences per second under (i, j)."""
        if self.exposure[i, j] <= 0:
            return 0.0
        return float(self.expected[i, j].sum()) / (self.exposure[i, j] * self.tick_ns / NS_PER_SECOND)

    def signal_to_accidental(self, table):
        """True-to-accidental coincidence ratio per setting pair; inf when no accidentals."""
        counts = table.joint.sum(axis=(2, 3))
        expected = self.expected.sum(axis=(2, 3))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(expected > 0, (counts - expected) / expected, np.inf)
        return ratio


def _site_singles(log, site, arity, schedule):
    """Counts of one site's events per [own setting, remote setting, outcome]."""
    stream = log.stream(site)
    other = Site.B if site is Site.A else Site.A
    remote = settings_at(log, other, stream.time, schedule)
    counts = np.zeros((arity + 1, arity + 1, 2))
    outcome = np.where(stream.channel > 0, 0, 1)
    np.add.at(counts, (stream.setting.astype(np.int64), remote, outcome), 1)
    if site is Site.B:
        counts = counts.transpose(1, 0, 2)
    return counts


def _uncorrelated_singles(table, exposure, tau):
    """Per-outcome counts of each side's events that carry no partner.

    Lone detections miss the accidental pairs, which also came from
    uncorrelated events. With L_A, L_B the lone totals of a setting pair and
    k = tau / T, the accidental count a solves a = k (L_A + a)(L_B + a);
    the smaller root is taken.
    """
    lone_a = table.a_only
    lone_b = table.b_only
    total_a = lone_a.sum(axis=2)
    total_b = lone_b.sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(exposure > 0, tau / exposure, 0.0)
        linear = 1.0 - k * (total_a + total_b)
        disc = linear**2 - 4.0 * k**2 * total_a * total_b
        if np.any((k > 0) & ((linear <= 0) | (disc < 0))):
            raise AccidentalsError("uncorrelated singles saturate the window")
        acc = np.where(k > 0, 2.0 * k * total_a * total_b / (linear + np.sqrt(np.maximum(disc, 0.0))), 0.0)
        share_a = np.where(total_a[..., None] > 0, lone_a / total_a[..., None], 0.0)
        share_b = np.where(total_b[..., None] > 0, lone_b / total_b[..., None], 0.0)
    return share_a * (total_a + acc)[..., None], share_b * (total_b + acc)[..., None]


def estimate_accidentals(log, tau, schedule=None, table=None):
    """Accidental coincidences expected in a window of width tau, per setting pair.

    Each side's singles rate per outcome is measured over the joint duty
    time of the setting pair; the accidental count is S_A * S_B * tau * T.
    Given the window table of the same log, S counts only the uncorrelated
    events (lone detections and the accidental pairs), so signal singles
    do not inflate the estimate.
    """
    if Mode(log.header.mode) is not Mode.CONTINUOUS:
        raise DomainError("accidentals are estimated for continuous-mode logs only")
    if schedule is None:
        schedule = schedule_from_header(log.header)
    arity = log.header.arity
    exposure = pair_exposure(log, schedule)
    singles_a = _site_singles(log, Site.A, arity, schedule)
    singles_b = _site_singles(log, Site.B, arity, schedule)

    busy = (singles_a.sum(axis=2) + singles_b.sum(axis=2)) > 0
    if exposure.sum() <= 0 or np.any(busy & (exposure <= 0)):
        raise AccidentalsError("zero duty time for a setting pair with detections")
    if table is not None:
        singles_a, singles_b = _uncorrelated_singles(table, exposure, tau)

    with np.errstate(divide="ignore", invalid="ignore"):
        rate_a = np.where(exposure[..., None] > 0, singles_a / exposure[..., None], 0.0)
        rate_b = np.where(exposure[..., None] > 0, singles_b / exposure[..., None], 0.0)
    expected = accidental_rate(rate_a[..., :, None], rate_b[..., None, :], tau) * exposure[..., None, None]
    return AccidentalEstimate(tau, expected, exposure, singles_a, singles_b, log.header.tick_ns)


def subtract_accidentals(table, accidentals):
    """Table with expected accidentals removed from every coincidence cell.

    Cells that would go negative are clipped at zero. The result is
    flagged for good; the flag cannot be cleared by later steps.
    """
    expected = getattr(accidentals, "expected", accidentals)
    corrected = table.joint - expected
    negative = corrected < 0
    clipped = int(negative.sum())
    if clipped:
        warn(f"accidental subtraction clipped {clipped} cells at zero")
        corrected = np.where(negative, 0.0, corrected)
    flags = table.flags
    if SUBTRACTED_FLAG not in flags:
        flags = flags + (SUBTRACTED_FLAG,)
    if clipped:
        flags = flags + (f"{clipped} cells clipped after subtraction",)
    return dataclasses.replace(
        table,
        joint=corrected,
        accidentals_subtracted=True,
        clipped_cells=table.clipped_cells + clipped,
        flags=flags,
    )
