"""
Coincidence identification: turning two event streams into joint trials.

Policies: pairing by trial id, a symmetric time window, fixed time slots,
setting-dependent (asymmetric) windows and herald-anchored trials. A
window pair (e_a, e_b) is coincident iff |t_a - t_b| <= tau / 2; with
integer ticks that is |t_a - t_b| <= floor(tau / 2).
"""

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from bell_lab import TableError, warn
from bell_lab.event_model import NODETECT, REMOVED, Site, TrialRecord

NO_LABEL = -1


class PolicyKind(str, Enum):
    TRIAL = "trial"
    WINDOW = "window"
    SLOTS = "slots"
    ASYMMETRIC = "asymmetric"
    HERALDED = "heralded"


def half_width(tau):
    """Largest integer |t_a - t_b| still inside a window of width tau."""
    if math.isinf(tau):
        return math.inf
    return int(math.floor(tau / 2))


def ch_compatible_windows(tau):
    """Default asymmetric widths: tau on (1,1), (1,2), (2,1) and 3 tau on (2,2)."""
    return {(1, 1): tau, (1, 2): tau, (2, 1): tau, (2, 2): 3 * tau}


def windows_are_ch_compatible(windows):
    """Coincidence on (1,1), (1,2), (2,1) must force coincidence on (2,2)."""
    needed = half_width(windows[(1, 1)]) + half_width(windows[(1, 2)]) + half_width(windows[(2, 1)])
    return half_width(windows[(2, 2)]) >= needed


@dataclass(frozen=True)
class CoincidencePolicy:
    kind: PolicyKind
    window: float = 0.0
    slot_len: int = 0
    origin: int = 0
    windows: Dict[Tuple[int, int], float] = field(default_factory=dict)
    heralds: Optional[Tuple[int, ...]] = None
    tolerance: int = 0
    ch_compatible: bool = False

    def __post_init__(self):
        if self.kind is PolicyKind.WINDOW and not self.window > 0:
            raise ValueError(f"window width must be positive, got {self.window}")
        if self.kind is PolicyKind.SLOTS and self.slot_len <= 0:
            raise ValueError(f"slot length must be positive, got {self.slot_len}")
        if self.kind is PolicyKind.ASYMMETRIC:
            if not self.windows or min(self.windows.values()) <= 0:
                raise ValueError("asymmetric windows must all be positive")
            if self.ch_compatible and not windows_are_ch_compatible(self.windows):
                raise ValueError("windows flagged ch_compatible do not nest")
        if self.kind is PolicyKind.HERALDED and self.tolerance < 0:
            raise ValueError("herald tolerance must be nonnegative")

    @property
    def trial_structured(self):
        return self.kind in (PolicyKind.TRIAL, PolicyKind.SLOTS, PolicyKind.HERALDED)

    @property
    def ch_bound_established(self):
        """Policies for which the coincidence-restricted CH bound holds as is."""
        return self.trial_structured or (self.kind is PolicyKind.ASYMMETRIC and self.ch_compatible)

    def width(self, setting_a=1, setting_b=1):
        if self.kind is PolicyKind.ASYMMETRIC:
            return self.windows[(setting_a, setting_b)]
        return self.window

    def is_coincident(self, delta, setting_a=1, setting_b=1):
        return abs(delta) <= half_width(self.width(setting_a, setting_b))

    def describe(self):
        if self.kind is PolicyKind.WINDOW:
            return f"window tau={self.window:g}"
        if self.kind is PolicyKind.SLOTS:
            return f"slots len={self.slot_len} origin={self.origin}"
        if self.kind is PolicyKind.ASYMMETRIC:
            widths = " ".join(f"{i}{j}:{w:g}" for (i, j), w in sorted(self.windows.items()))
            return f"asymmetric {widths}" + (" ch_compatible" if self.ch_compatible else "")
        if self.kind is PolicyKind.HERALDED:
            return f"heralded tolerance={self.tolerance}"
        return "trial"


@dataclass(frozen=True, eq=False)
class Pairing:
    """Result of a matcher: indices into the two streams.

    Labels are the trial, slot or herald index a pair or a lone event
    belongs to (NO_LABEL under window policies).
    """

    policy: CoincidencePolicy
    idx_a: np.ndarray
    idx_b: np.ndarray
    unmatched_a: np.ndarray
    unmatched_b: np.ndarray
    label_pairs: np.ndarray
    label_a: np.ndarray
    label_b: np.ndarray
    extra_events: int = 0
    unassigned: int = 0

    def __len__(self):
        return len(self.idx_a)

    def time_pairs(self, stream_a, stream_b):
        return sorted(
            zip(stream_a.time[self.idx_a].tolist(), stream_b.time[self.idx_b].tolist())
        )

    def records(self, stream_a, stream_b):
        """Joint trials as TrialRecords; lone events get NODETECT on the other side."""
        records = []
        for k in range(len(self.idx_a)):
            a, b = self.idx_a[k], self.idx_b[k]
            records.append(
                TrialRecord(
                    int(self.label_pairs[k]),
                    int(stream_a.setting[a]),
                    int(stream_b.setting[b]),
                    int(stream_a.channel[a]),
                    int(stream_b.channel[b]),
                    int(stream_a.time[a]),
                    int(stream_b.time[b]),
                )
            )
        for k, a in enumerate(self.unmatched_a):
            records.append(
                TrialRecord(int(self.label_a[k]), int(stream_a.setting[a]), REMOVED,
                            int(stream_a.channel[a]), NODETECT, int(stream_a.time[a]), None)
            )
        for k, b in enumerate(self.unmatched_b):
            records.append(
                TrialRecord(int(self.label_b[k]), REMOVED, int(stream_b.setting[b]),
                            NODETECT, int(stream_b.channel[b]), None, int(stream_b.time[b]))
            )
        return records


def _empty_index():
    return np.empty(0, dtype=np.int64)


def _match_nearest_first(t_a, t_b, reach, accept=None):
    """Global nearest-first matching; ties go to the earlier pair.

    Candidates are all (a, b) with |t_a - t_b| <= reach; accept() may veto
    candidates by index arrays. Candidates are taken in order of |t_a - t_b|
    over the whole run, not in a chronological sweep, so a closer pair later
    in time beats an earlier wider one. Widening reach only adds pairs.
    Returns (idx_a, idx_b) sorted by idx_a.
    """
    t_a = np.asarray(t_a, dtype=np.int64)
    t_b = np.asarray(t_b, dtype=np.int64)
    if len(t_a) == 0 or len(t_b) == 0:
        return _empty_index(), _empty_index()

    if math.isinf(reach):
        lo = np.zeros(len(t_a), dtype=np.int64)
        hi = np.full(len(t_a), len(t_b), dtype=np.int64)
    else:
        lo = np.searchsorted(t_b, t_a - reach, side="left")
        hi = np.searchsorted(t_b, t_a + reach, side="right")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        return _empty_index(), _empty_index()
    cand_a = np.repeat(np.arange(len(t_a)), counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    cand_b = np.repeat(lo, counts) + (np.arange(total) - starts)

    if accept is not None:
        keep = accept(cand_a, cand_b)
        cand_a = cand_a[keep]
        cand_b = cand_b[keep]

    ta = t_a[cand_a]
    tb = t_b[cand_b]
    order = np.lexsort((cand_b, cand_a, np.maximum(ta, tb), np.minimum(ta, tb), np.abs(ta - tb)))

    used_a = bytearray(len(t_a))
    used_b = bytearray(len(t_b))
    pairs_a = []
    pairs_b = []
    for a, b in zip(cand_a[order].tolist(), cand_b[order].tolist()):
        if used_a[a] or used_b[b]:
            continue
        used_a[a] = 1
        used_b[b] = 1
        pairs_a.append(a)
        pairs_b.append(b)

    idx_a = np.asarray(pairs_a, dtype=np.int64)
    idx_b = np.asarray(pairs_b, dtype=np.int64)
    order = np.argsort(idx_a, kind="mergesort")
    return idx_a[order], idx_b[order]


def _window_pairing(policy, n_a, n_b, idx_a, idx_b):
    unmatched_a = np.setdiff1d(np.arange(n_a), idx_a)
    unmatched_b = np.setdiff1d(np.arange(n_b), idx_b)
    return Pairing(
        policy,
        idx_a,
        idx_b,
        unmatched_a,
        unmatched_b,
        np.full(len(idx_a), NO_LABEL),
        np.full(len(unmatched_a), NO_LABEL),
        np.full(len(unmatched_b), NO_LABEL),
    )


def match_window(events_a, events_b, tau):
    """Nearest-first window matching; each event joins at most one pair."""
    policy = CoincidencePolicy(PolicyKind.WINDOW, window=tau)
    idx_a, idx_b = _match_nearest_first(events_a.time, events_b.time, half_width(tau))
    return _window_pairing(policy, len(events_a), len(events_b), idx_a, idx_b)


def match_asymmetric(events_a, events_b, windows, ch_compatible=False):
    """Window matching whose width depends on the realized setting pair."""
    policy = CoincidencePolicy(PolicyKind.ASYMMETRIC, windows=dict(windows), ch_compatible=ch_compatible)
    settings_a = np.asarray(events_a.setting)
    settings_b = np.asarray(events_b.setting)
    arity = max(i for i, _ in windows)
    reach_table = np.full((arity + 1, arity + 1), -1.0)
    for (i, j), tau in windows.items():
        reach_table[i, j] = half_width(tau)
    for settings, side in ((settings_a, "A"), (settings_b, "B")):
        if len(settings) and (settings.min() < 1 or settings.max() > arity):
            raise TableError(f"site {side} has events without a windowed setting")
    if (reach_table[1:, 1:] < 0).any():
        raise TableError("asymmetric windows must cover every setting pair")

    def accept(cand_a, cand_b):
        reach = reach_table[settings_a[cand_a], settings_b[cand_b]]
        delta = np.abs(events_a.time[cand_a] - events_b.time[cand_b])
        return delta <= reach

    widest = max(half_width(tau) for tau in windows.values())
    idx_a, idx_b = _match_nearest_first(events_a.time, events_b.time, widest, accept)
    return _window_pairing(policy, len(events_a), len(events_b), idx_a, idx_b)


def _label_pairing(policy, labels_a, labels_b, unassigned=0):
    """Pair events sharing a label; earliest event per label and side wins."""
    keep_a = np.flatnonzero(labels_a != NO_LABEL)
    keep_b = np.flatnonzero(labels_b != NO_LABEL)
    unique_a, first_a = np.unique(labels_a[keep_a], return_index=True)
    unique_b, first_b = np.unique(labels_b[keep_b], return_index=True)
    first_a = keep_a[first_a]
    first_b = keep_b[first_b]
    extra = (len(keep_a) - len(unique_a)) + (len(keep_b) - len(unique_b))
    if extra:
        warn(f"{extra} events shared a trial with an earlier event on the same side and were dropped")

    common, in_a, in_b = np.intersect1d(unique_a, unique_b, return_indices=True)
    lone_a = np.setdiff1d(np.arange(len(unique_a)), in_a)
    lone_b = np.setdiff1d(np.arange(len(unique_b)), in_b)
    return Pairing(
        policy,
        first_a[in_a],
        first_b[in_b],
        first_a[lone_a],
        first_b[lone_b],
        common,
        unique_a[lone_a],
        unique_b[lone_b],
        extra_events=int(extra),
        unassigned=int(unassigned),
    )


def match_slots(events_a, events_b, slot_len, origin=0):
    """Events in the same slot pair up; empty half-slots are NODETECT."""
    policy = CoincidencePolicy(PolicyKind.SLOTS, slot_len=slot_len, origin=origin)
    labels_a = (np.asarray(events_a.time, dtype=np.int64) - origin) // slot_len
    labels_b = (np.asarray(events_b.time, dtype=np.int64) - origin) // slot_len
    return _label_pairing(policy, labels_a, labels_b)


def match_trials(events_a, events_b):
    """Pair by the trial ids recorded in a slotted log."""
    return _label_pairing(
        CoincidencePolicy(PolicyKind.TRIAL),
        np.asarray(events_a.trial, dtype=np.int64),
        np.asarray(events_b.trial, dtype=np.int64),
    )


def assign_to_heralds(times, heralds, tolerance):
    """Index of the nearest herald (the later one on ties) within tolerance, else NO_LABEL."""
    times = np.asarray(times, dtype=np.int64)
    heralds = np.asarray(heralds, dtype=np.int64)
    if len(heralds) == 0:
        return np.full(len(times), NO_LABEL)
    later = np.clip(np.searchsorted(heralds, times, side="left"), 0, len(heralds) - 1)
    earlier = np.clip(later - 1, 0, len(heralds) - 1)
    pick_later = np.abs(heralds[later] - times) <= np.abs(times - heralds[earlier])
    nearest = np.where(pick_later, later, earlier)
    inside = np.abs(heralds[nearest] - times) <= tolerance
    return np.where(inside, nearest, NO_LABEL)


def match_heralded(events_a, events_b, heralds, tolerance):
    """Trials anchored on herald times; events far from every herald are dropped."""
    policy = CoincidencePolicy(PolicyKind.HERALDED, heralds=tuple(int(h) for h in heralds), tolerance=tolerance)
    labels_a = assign_to_heralds(events_a.time, heralds, tolerance)
    labels_b = assign_to_heralds(events_b.time, heralds, tolerance)
    unassigned = int((labels_a == NO_LABEL).sum() + (labels_b == NO_LABEL).sum())
    if unassigned:
        warn(f"{unassigned} events fell outside every herald tolerance")
    return _label_pairing(policy, labels_a, labels_b, unassigned)


def schedule_heralds(schedule):
    """Herald times of a pulsed source: one per trial at its emission time."""
    return np.arange(schedule.trials, dtype=np.int64) * schedule.period + schedule.period // 2


def pair_events(log, policy, schedule=None):
    """Apply a coincidence policy to a log."""
    stream_a = log.stream(Site.A)
    stream_b = log.stream(Site.B)
    if policy.kind is PolicyKind.TRIAL:
        return match_trials(stream_a, stream_b)
    if policy.kind is PolicyKind.WINDOW:
        return match_window(stream_a, stream_b, policy.window)
    if policy.kind is PolicyKind.SLOTS:
        return match_slots(stream_a, stream_b, policy.slot_len, policy.origin)
    if policy.kind is PolicyKind.ASYMMETRIC:
        return match_asymmetric(stream_a, stream_b, policy.windows, policy.ch_compatible)
    heralds = policy.heralds
    if heralds is None:
        if schedule is None:
            raise TableError("heralded matching needs herald times or a recorded trial schedule")
        heralds = schedule_heralds(schedule)
    pairing = match_heralded(stream_a, stream_b, heralds, policy.tolerance)
    return dataclasses.replace(pairing, policy=policy)


@dataclass(frozen=True)
class CoincidenceStats:
    """Per setting pair: coincidence counts, conditional efficiencies and gamma.

    eta_a_given_b[i, j] is P(A det | B det) under settings (i, j); NaN marks
    an undefined cell (no singles). gamma is None when trials are not
    defined (window policies).
    """

    coincidences: np.ndarray
    eta_a_given_b: np.ndarray
    eta_b_given_a: np.ndarray
    gamma: Optional[np.ndarray]
    undefined_cells: Tuple[Tuple[int, int], ...]

    @property
    def eta(self):
        """Minimum conditional efficiency over setting pairs and directions."""
        values = np.concatenate((self.eta_a_given_b[1:, 1:].ravel(), self.eta_b_given_a[1:, 1:].ravel()))
        values = values[~np.isnan(values)]
        return float(values.min()) if len(values) else math.nan

    @property
    def gamma_min(self):
        if self.gamma is None:
            return None
        values = self.gamma[1:, 1:].ravel()
        values = values[~np.isnan(values)]
        return float(values.min()) if len(values) else math.nan


def coincidence_stats(table):
    """Conditional efficiencies and coincidence probabilities of a table."""
    coincidences = table.joint.sum(axis=(2, 3))
    singles_b = coincidences + table.b_only.sum(axis=2)
    singles_a = coincidences + table.a_only.sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        eta_a_given_b = np.where(singles_b > 0, coincidences / singles_b, np.nan)
        eta_b_given_a = np.where(singles_a > 0, coincidences / singles_a, np.nan)
        gamma = None
        if table.trials is not None:
            gamma = np.where(table.trials > 0, coincidences / table.trials, np.nan)

    undefined = tuple(
        (i, j)
        for i in range(1, table.arity + 1)
        for j in range(1, table.arity + 1)
        if np.isnan(eta_a_given_b[i, j]) or np.isnan(eta_b_given_a[i, j])
    )
    return CoincidenceStats(coincidences, eta_a_given_b, eta_b_given_a, gamma, undefined)
