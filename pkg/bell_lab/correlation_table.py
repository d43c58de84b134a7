"""
Per-setting-pair outcome counts, built from a log and its pairing.

Setting axes run 0..m with 0 the REMOVED analyzer; outcome axes hold +1
at index 0 and -1 at index 1. Lone detections (one side detected, the
other did not) are kept per remote setting when that setting is known
and per local setting only when it is not.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from bell_lab import TableError
from bell_lab.coincidence import PolicyKind
from bell_lab.event_model import Mode, Site
from bell_lab.schedule import pair_exposure, settings_at

# nodetect_value that drops trials with a missing detection
EXCLUDE = "exclude"
OUTCOME_SIGNS = np.array([1, -1])


def outcome_index(channels):
    """+1 -> 0, -1 -> 1."""
    return np.where(np.asarray(channels) > 0, 0, 1)


def parse_nodetect_value(value):
    if value in (EXCLUDE, None):
        return EXCLUDE
    if str(value).strip() == EXCLUDE:
        return EXCLUDE
    number = int(value)
    if number not in (0, -1):
        raise ValueError(f"nodetect value must be 0, -1 or {EXCLUDE}, got {value}")
    return number


@dataclass(frozen=True, eq=False)
class CorrelationTable:
    arity: int
    joint: np.ndarray
    a_only: np.ndarray
    b_only: np.ndarray
    a_unknown: np.ndarray
    b_unknown: np.ndarray
    trials: Optional[np.ndarray] = None
    exposure: Optional[np.ndarray] = None
    policy: str = "trial"
    trial_structured: bool = True
    ch_bound_established: bool = True
    accidentals_subtracted: bool = False
    clipped_cells: int = 0
    flags: Tuple[str, ...] = ()
    angles_a: Tuple[float, ...] = ()
    angles_b: Tuple[float, ...] = ()
    metadata: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def empty(cls, arity, **kwargs):
        size = arity + 1
        return cls(
            arity,
            np.zeros((size, size, 2, 2)),
            np.zeros((size, size, 2)),
            np.zeros((size, size, 2)),
            np.zeros((size, 2)),
            np.zeros((size, 2)),
            **kwargs,
        )

    @classmethod
    def from_counts(cls, counts, trials=None, **kwargs):
        """Table from {(i, j): [[n_pp, n_pm], [n_mp, n_mm]]} coincidence counts."""
        arity = max(max(i, j) for i, j in counts)
        table = cls.empty(arity, trials=trials, **kwargs)
        for (i, j), block in counts.items():
            table.joint[i, j] = np.asarray(block, dtype=np.float64)
        return table

    def with_flag(self, flag):
        if flag in self.flags:
            return self
        return dataclasses.replace(self, flags=self.flags + (flag,))

    def has_cell(self, i, j):
        return 0 <= i <= self.arity and 0 <= j <= self.arity and self.coincidences(i, j) > 0

    def require_cell(self, i, j):
        if not self.has_cell(i, j):
            raise TableError(f"missing cell ({i}, {j})")

    def coincidences(self, i, j):
        return float(self.joint[i, j].sum())

    def product_sum(self, i, j):
        block = self.joint[i, j]
        return float(block[0, 0] + block[1, 1] - block[0, 1] - block[1, 0])

    def neither(self, i, j):
        """Trials of (i, j) in which neither side detected."""
        if self.trials is None:
            raise TableError("trial counts are not defined for this table")
        rest = self.trials[i, j] - self.coincidences(i, j) - self.a_only[i, j].sum() - self.b_only[i, j].sum()
        return max(0.0, float(rest))

    def moments(self, i, j, nodetect_value=EXCLUDE):
        """(n, sum of products, sum of squared products) of cell (i, j).

        EXCLUDE keeps coincidences only; 0 or -1 stands in for every
        missing outcome and needs trial counts.
        """
        if nodetect_value == EXCLUDE:
            n = self.coincidences(i, j)
            return n, self.product_sum(i, j), n
        v = float(nodetect_value)
        lone_a = self.a_only[i, j]
        lone_b = self.b_only[i, j]
        lone_total = float(lone_a.sum() + lone_b.sum())
        neither = self.neither(i, j)
        n = float(self.trials[i, j])
        first = (
            self.product_sum(i, j)
            + v * float(lone_a[0] - lone_a[1])
            + v * float(lone_b[0] - lone_b[1])
            + v * v * neither
        )
        second = self.coincidences(i, j) + v * v * lone_total + v**4 * neither
        return n, first, second

    def correlation(self, i, j, nodetect_value=EXCLUDE):
        n, first, _ = self.moments(i, j, nodetect_value)
        if n <= 0:
            raise TableError(f"missing cell ({i}, {j})")
        return first / n

    def normalizer(self, i, j):
        """Trials of (i, j) if defined, else its joint duty time in ticks."""
        if self.trials is not None:
            value = float(self.trials[i, j])
        elif self.exposure is not None:
            value = float(self.exposure[i, j])
        else:
            raise TableError("table has neither trial counts nor exposure")
        if value <= 0:
            raise TableError(f"missing cell ({i}, {j})")
        return value

    def probability(self, i, j, alpha=1, beta=1):
        """Joint probability (or rate) of outcomes (alpha, beta) under (i, j)."""
        a = 0 if alpha > 0 else 1
        b = 0 if beta > 0 else 1
        return float(self.joint[i, j, a, b]) / self.normalizer(i, j)

    def single_probability(self, site, i, j, outcome=1):
        """Probability (or rate) of `site` registering `outcome` under (i, j)."""
        k = 0 if outcome > 0 else 1
        if Site(site) is Site.A:
            count = self.joint[i, j, k, :].sum() + self.a_only[i, j, k]
        else:
            count = self.joint[i, j, :, k].sum() + self.b_only[i, j, k]
        return float(count) / self.normalizer(i, j)

    def singles(self, site, i, j):
        if Site(site) is Site.A:
            return float(self.joint[i, j].sum() + self.a_only[i, j].sum())
        return float(self.joint[i, j].sum() + self.b_only[i, j].sum())

    def angle_pair(self, i, j):
        if not self.angles_a or not self.angles_b:
            return None
        return self.angles_a[i - 1], self.angles_b[j - 1]


def _aligned(policy, schedule):
    """True when pairing labels are the schedule's trial ids."""
    if schedule is None:
        return False
    if policy.kind is PolicyKind.TRIAL:
        return True
    if policy.kind is PolicyKind.SLOTS:
        return policy.slot_len == schedule.period and policy.origin == 0
    return policy.kind is PolicyKind.HERALDED and policy.heralds is None


def _angles(header, key):
    text = header.extras.get(key, "")
    return tuple(float(x) for x in text.split())


def _remote_settings(log, site, stream, idx, labels, schedule, aligned, trial_structured):
    other = Site.B if Site(site) is Site.A else Site.A
    if len(idx) == 0:
        return np.empty(0, dtype=np.int64)
    if aligned:
        a, b = schedule.settings(labels)
        return b if other is Site.B else a
    if schedule is not None or not trial_structured:
        return settings_at(log, other, stream.time[idx], schedule)
    return None


def tabulate(log, pairing, schedule=None):
    """CorrelationTable of a pairing of `log`."""
    arity = log.header.arity
    policy = pairing.policy
    aligned = _aligned(policy, schedule)
    table = CorrelationTable.empty(
        arity,
        policy=policy.describe(),
        trial_structured=policy.trial_structured,
        ch_bound_established=policy.ch_bound_established,
        angles_a=_angles(log.header, "source.angles_a"),
        angles_b=_angles(log.header, "source.angles_b"),
        metadata=dict(log.header.extras),
    )

    stream_a = log.stream(Site.A)
    stream_b = log.stream(Site.B)
    np.add.at(
        table.joint,
        (
            stream_a.setting[pairing.idx_a].astype(np.int64),
            stream_b.setting[pairing.idx_b].astype(np.int64),
            outcome_index(stream_a.channel[pairing.idx_a]),
            outcome_index(stream_b.channel[pairing.idx_b]),
        ),
        1,
    )

    for site, stream, idx, labels, lone, unknown in (
        (Site.A, stream_a, pairing.unmatched_a, pairing.label_a, table.a_only, table.a_unknown),
        (Site.B, stream_b, pairing.unmatched_b, pairing.label_b, table.b_only, table.b_unknown),
    ):
        local = stream.setting[idx].astype(np.int64)
        outcomes = outcome_index(stream.channel[idx])
        remote = _remote_settings(log, site, stream, idx, labels, schedule, aligned, policy.trial_structured)
        if remote is None:
            np.add.at(unknown, (local, outcomes), 1)
        elif site is Site.A:
            np.add.at(lone, (local, remote, outcomes), 1)
        else:
            np.add.at(lone, (remote, local, outcomes), 1)

    trials = schedule.trial_counts(arity).astype(np.float64) if aligned else None
    exposure = None
    if Mode(log.header.mode) is Mode.CONTINUOUS or schedule is not None:
        exposure = pair_exposure(log, schedule)
    flags = ()
    if pairing.extra_events:
        flags += (f"{pairing.extra_events} multiple detections dropped",)
    if pairing.unassigned:
        flags += (f"{pairing.unassigned} unheralded events dropped",)
    if table.a_unknown.sum() + table.b_unknown.sum() > 0:
        flags += ("remote setting of lone detections unknown",)
    return dataclasses.replace(table, trials=trials, exposure=exposure, flags=flags)


def count_table(records, arity, trials=None, **kwargs):
    """CorrelationTable of TrialRecords whose settings are all known."""
    table = CorrelationTable.empty(arity, trials=trials, **kwargs)
    for record in records:
        i, j = record.setting_a, record.setting_b
        if record.outcome_a and record.outcome_b:
            table.joint[i, j, 0 if record.outcome_a > 0 else 1, 0 if record.outcome_b > 0 else 1] += 1
        elif record.outcome_a:
            table.a_only[i, j, 0 if record.outcome_a > 0 else 1] += 1
        elif record.outcome_b:
            table.b_only[i, j, 0 if record.outcome_b > 0 else 1] += 1
    return table
