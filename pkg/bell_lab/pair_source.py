"""
Per-trial joint responses of the pair source.

Quantum samplers (singlet, general two-qubit state, Franson interferometer)
and local hidden-variable strategies. Every strategy here that is not a
memory strategy answers from (lambda, local setting) alone; the remote
setting never reaches it.
"""

import math
import re
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from bell_lab import StrategyError
from bell_lab.event_model import REMOVED, Site
from bell_lab.keyed_random import Stream, keyed_uniforms

HALF_PI = math.pi / 2
WEIGHT_TOLERANCE = 1e-9
TABLE_HEADER_PATTERN = re.compile(r"^#(\w+)=(.*)$")


@dataclass(frozen=True)
class LocalResponse:
    outcome: int
    detected: bool = True
    delay: int = 0

    def __post_init__(self):
        if self.outcome not in (1, -1):
            raise ValueError(f"outcome must be +1 or -1, got {self.outcome}")
        if self.delay < 0:
            raise ValueError("delay must be nonnegative")


@dataclass(frozen=True)
class ResponseBatch:
    """LocalResponses of many trials, column-wise."""

    outcome: np.ndarray
    detected: np.ndarray
    delay: np.ndarray

    @classmethod
    def ideal(cls, outcome):
        outcome = np.asarray(outcome, dtype=np.int8)
        return cls(outcome, np.ones(len(outcome), dtype=bool), np.zeros(len(outcome), dtype=np.int64))

    def __len__(self):
        return len(self.outcome)

    def response(self, k):
        return LocalResponse(int(self.outcome[k]), bool(self.detected[k]), int(self.delay[k]))


class QuantumKind(str, Enum):
    SINGLET = "singlet"
    TWO_QUBIT = "two_qubit"
    FRANSON = "franson"


class Arm(IntEnum):
    SHORT = 0
    LONG = 1


@dataclass(frozen=True)
class QuantumPairModel:
    kind: QuantumKind
    schmidt_angle: float = math.pi / 4
    long_path_delay: int = 5

    def __post_init__(self):
        if not 0.0 <= self.schmidt_angle <= math.pi / 4 + 1e-12:
            raise StrategyError(f"schmidt angle must lie in [0, pi/4], got {self.schmidt_angle}")
        if self.long_path_delay < 0:
            raise StrategyError("long path delay must be nonnegative")

    def probabilities(self, a_angle, b_angle):
        """Joint outcome probabilities as a 2x2 array indexed [alpha, beta], +1 first."""
        if self.kind is QuantumKind.SINGLET:
            return singlet_probabilities(a_angle, b_angle)
        if self.kind is QuantumKind.TWO_QUBIT:
            return two_qubit_probabilities(self.schmidt_angle, a_angle, b_angle)
        # Franson: coincident subensemble
        c = math.cos(a_angle + b_angle)
        return np.array([[1 + c, 1 - c], [1 - c, 1 + c]]) / 4


def singlet_probabilities(a_angle, b_angle):
    c = math.cos(a_angle - b_angle)
    return np.array([[1 - c, 1 + c], [1 + c, 1 - c]]) / 4


def two_qubit_probabilities(r, a_angle, b_angle):
    """Born-rule probabilities of polarization analyzers on cos r|HH> + sin r|VV>."""
    a_angle = np.asarray(a_angle, dtype=np.float64)
    b_angle = np.asarray(b_angle, dtype=np.float64)
    probs = np.empty(np.broadcast(a_angle, b_angle).shape + (2, 2))
    for i, a_shift in enumerate((0.0, HALF_PI)):
        for j, b_shift in enumerate((0.0, HALF_PI)):
            ta = a_angle + a_shift
            tb = b_angle + b_shift
            amplitude = math.cos(r) * np.cos(ta) * np.cos(tb) + math.sin(r) * np.sin(ta) * np.sin(tb)
            probs[..., i, j] = amplitude**2
    return probs


# Batch samplers: uniforms in, outcome arrays out


def singlet_outcomes(a_angles, b_angles, u_a, u_b):
    outcome_a = np.where(u_a < 0.5, 1, -1).astype(np.int8)
    anti = u_b < (1 + np.cos(np.asarray(a_angles) - np.asarray(b_angles))) / 2
    outcome_b = np.where(anti, -outcome_a, outcome_a).astype(np.int8)
    return outcome_a, outcome_b


def two_qubit_outcomes(r, a_angles, b_angles, u):
    probs = two_qubit_probabilities(r, a_angles, b_angles).reshape(-1, 4)
    cumulative = np.cumsum(probs, axis=1)
    # Guard the last edge against rounding
    cumulative[:, -1] = 1.0
    category = (u[:, None] > cumulative).sum(axis=1)
    outcome_a = np.where(category < 2, 1, -1).astype(np.int8)
    outcome_b = np.where(category % 2 == 0, 1, -1).astype(np.int8)
    return outcome_a, outcome_b


def franson_outcomes(a_phases, b_phases, u_a, u_b, u_path):
    """Outcomes and arms; equal arms interfere with E = cos(a + b)."""
    path_pair = np.minimum((u_path * 4).astype(np.int64), 3)
    # 0: short-short, 1: long-long, 2: short-long, 3: long-short
    arm_a = np.where((path_pair == 1) | (path_pair == 3), Arm.LONG, Arm.SHORT).astype(np.int8)
    arm_b = np.where((path_pair == 1) | (path_pair == 2), Arm.LONG, Arm.SHORT).astype(np.int8)
    coincident = arm_a == arm_b

    outcome_a = np.where(u_a < 0.5, 1, -1).astype(np.int8)
    equal = u_b < (1 + np.cos(np.asarray(a_phases) + np.asarray(b_phases))) / 2
    correlated = np.where(equal, outcome_a, -outcome_a)
    independent = np.where(u_b < 0.5, 1, -1)
    outcome_b = np.where(coincident, correlated, independent).astype(np.int8)
    return outcome_a, outcome_b, arm_a, arm_b


def _trial_uniforms(seed, trial_id, *streams):
    return [keyed_uniforms(seed, stream, np.array([trial_id])) for stream in streams]


def sample_singlet(a_angle, b_angle, seed, trial_id):
    """One singlet trial: P(alpha, beta) = (1 - alpha*beta*cos(a - b)) / 4."""
    u_a, u_b = _trial_uniforms(seed, trial_id, Stream.QUANTUM_A, Stream.QUANTUM_B)
    outcome_a, outcome_b = singlet_outcomes(a_angle, b_angle, u_a, u_b)
    return int(outcome_a[0]), int(outcome_b[0])


def sample_two_qubit(r, a_angle, b_angle, seed, trial_id):
    if not 0.0 <= r <= math.pi / 4 + 1e-12:
        raise StrategyError(f"schmidt angle must lie in [0, pi/4], got {r}")
    (u,) = _trial_uniforms(seed, trial_id, Stream.QUANTUM_A)
    outcome_a, outcome_b = two_qubit_outcomes(r, np.array([a_angle]), np.array([b_angle]), u)
    return int(outcome_a[0]), int(outcome_b[0])


def sample_franson(a_phase, b_phase, seed, trial_id):
    """One Franson trial: (outcome_a, outcome_b, arm_a, arm_b)."""
    u_a, u_b, u_path = _trial_uniforms(
        seed, trial_id, Stream.QUANTUM_A, Stream.QUANTUM_B, Stream.PATH
    )
    outcome_a, outcome_b, arm_a, arm_b = franson_outcomes(a_phase, b_phase, u_a, u_b, u_path)
    return int(outcome_a[0]), int(outcome_b[0]), Arm(arm_a[0]), Arm(arm_b[0])


# Local hidden-variable strategies


class LhvKind(str, Enum):
    SIGN_MODEL = "sign_model"
    FAIR_COIN = "fair_coin"
    MEMORY_PR = "memory_pr"
    TABLE = "table"
    DELAY_TABLE = "delay_table"


class TableKind(str, Enum):
    DETECT = "detect"
    DELAY = "delay"


@dataclass(frozen=True, eq=False)
class StrategyTable:
    """Mixture of deterministic strategy rows.

    DETECT rows hold outcome +1, -1 or 0 (no detection) per side and
    setting; DELAY rows hold outcome +1 or -1 and a delay slot.
    """

    kind: TableKind
    weights: np.ndarray
    outcome_a: np.ndarray
    outcome_b: np.ndarray
    slot_a: Optional[np.ndarray] = None
    slot_b: Optional[np.ndarray] = None
    slot_ticks: int = 1
    window_slots: int = 0

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 1 or len(weights) == 0:
            raise StrategyError("a strategy table needs at least one row")
        if weights.min() < -WEIGHT_TOLERANCE:
            raise StrategyError("mixture weights must be nonnegative")
        total = weights.sum()
        if abs(total - 1.0) > 1e-6:
            raise StrategyError(f"mixture weights sum to {total}, not 1")
        weights = np.clip(weights, 0.0, None)
        object.__setattr__(self, "weights", weights / weights.sum())
        for name in ("outcome_a", "outcome_b", "slot_a", "slot_b"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=np.int64))
        if self.outcome_a.shape != self.outcome_b.shape or self.outcome_a.shape[0] != len(weights):
            raise StrategyError("outcome columns do not match the number of rows")
        if self.kind is TableKind.DELAY:
            if self.slot_a is None or self.slot_b is None:
                raise StrategyError("delay tables need slot columns")
            if np.any(np.abs(self.outcome_a) != 1) or np.any(np.abs(self.outcome_b) != 1):
                raise StrategyError("delay table outcomes must be +1 or -1")
        elif not np.isin(self.outcome_a, (-1, 0, 1)).all() or not np.isin(self.outcome_b, (-1, 0, 1)).all():
            raise StrategyError("detection table outcomes must be +1, -1 or 0")

    @property
    def arity(self):
        return self.outcome_a.shape[1]

    def __len__(self):
        return len(self.weights)

    def outcomes(self, site):
        return self.outcome_a if Site(site) is Site.A else self.outcome_b

    def slots(self, site):
        return self.slot_a if Site(site) is Site.A else self.slot_b


def save_strategy_table(table, path):
    """Write a witness mixture as `#key=value` lines plus a CSV of rows."""
    columns = {"weight": table.weights}
    for site, prefix in ((Site.A, "a"), (Site.B, "b")):
        for k in range(table.arity):
            columns[f"{prefix}{k + 1}_out"] = table.outcomes(site)[:, k]
            if table.kind is TableKind.DELAY:
                columns[f"{prefix}{k + 1}_slot"] = table.slots(site)[:, k]
    frame = pd.DataFrame(columns)
    with open(path, "w") as f:
        f.write(f"#kind={table.kind.value}\n")
        f.write(f"#slot_ticks={table.slot_ticks}\n")
        f.write(f"#window_slots={table.window_slots}\n")
        frame.to_csv(f, index=False, lineterminator="\n", float_format="%.17g")


def load_strategy_table(path):
    meta = {}
    with open(path, "r") as f:
        for line in f:
            if not line.startswith("#"):
                break
            match = TABLE_HEADER_PATTERN.match(line.strip())
            if match:
                meta[match.group(1)] = match.group(2)
    frame = pd.read_csv(path, comment="#")
    kind = TableKind(meta.get("kind", TableKind.DETECT.value))
    arity = sum(1 for name in frame.columns if name.startswith("a") and name.endswith("_out"))

    def block(prefix, suffix):
        return frame[[f"{prefix}{k + 1}_{suffix}" for k in range(arity)]].to_numpy()

    return StrategyTable(
        kind=kind,
        weights=frame["weight"].to_numpy(),
        outcome_a=block("a", "out"),
        outcome_b=block("b", "out"),
        slot_a=block("a", "slot") if kind is TableKind.DELAY else None,
        slot_b=block("b", "slot") if kind is TableKind.DELAY else None,
        slot_ticks=int(meta.get("slot_ticks", 1)),
        window_slots=int(meta.get("window_slots", 0)),
    )


@dataclass(frozen=True)
class TrialHistory:
    """What a memory strategy may know at trial `trial_id`: earlier remote settings."""

    trial_id: int
    remote_settings: np.ndarray


@dataclass(frozen=True)
class LhvStrategy:
    kind: LhvKind
    angles_a: Tuple[float, ...] = ()
    angles_b: Tuple[float, ...] = ()
    table: Optional[StrategyTable] = None
    # Remote patterns a memory strategy assumes, seen from each side
    assumed_pattern_a: Tuple[int, ...] = (1, 2)
    assumed_pattern_b: Tuple[int, ...] = (1, 2)

    def __post_init__(self):
        if self.kind in (LhvKind.TABLE, LhvKind.DELAY_TABLE) and self.table is None:
            raise StrategyError(f"{self.kind.value} strategies need a strategy table")
        if self.kind is LhvKind.TABLE and self.table.kind is not TableKind.DETECT:
            raise StrategyError("table strategies need a detection table")
        if self.kind is LhvKind.DELAY_TABLE and self.table.kind is not TableKind.DELAY:
            raise StrategyError("delay_table strategies need a delay table")
        if self.kind is LhvKind.MEMORY_PR and not (self.assumed_pattern_a and self.assumed_pattern_b):
            raise StrategyError("memory strategies need an assumed remote pattern per side")

    @property
    def has_memory(self):
        return self.kind is LhvKind.MEMORY_PR

    def angle(self, site, setting):
        angles = self.angles_a if Site(site) is Site.A else self.angles_b
        return angles[setting - 1]

    def remote_pattern(self, site):
        """Pattern of the other side's settings as assumed by `site`."""
        return self.assumed_pattern_b if Site(site) is Site.A else self.assumed_pattern_a


def draw_lambdas(strategy, seed, trial_ids):
    """Hidden variables for a range of trials, drawn at the source."""
    u = keyed_uniforms(seed, Stream.LAMBDA, trial_ids)
    if strategy.kind in (LhvKind.SIGN_MODEL, LhvKind.MEMORY_PR):
        return 2 * math.pi * u
    if strategy.kind is LhvKind.FAIR_COIN:
        return np.minimum((u * 4).astype(np.int64), 3)
    cumulative = np.cumsum(strategy.table.weights)
    rows = np.searchsorted(cumulative, u * cumulative[-1], side="right")
    return np.minimum(rows, len(cumulative) - 1)


def _sign(values):
    return np.where(values >= 0, 1, -1).astype(np.int8)


def memory_prediction(strategy, site, history):
    """Predicted remote setting, or None when the history breaks the assumed pattern."""
    pattern = strategy.remote_pattern(site)
    period = len(pattern)
    seen = np.asarray(history.remote_settings)
    start = max(0, len(seen) - 2 * period)
    for k in range(start, len(seen)):
        if seen[k] != pattern[k % period]:
            return None
    return pattern[history.trial_id % period]


def lhv_respond(strategy, lam, local_setting, side, history=None):
    """LocalResponse of one side for hidden variable `lam` and its own setting."""
    site = Site(side)
    if history is not None and len(history.remote_settings) and not strategy.has_memory:
        raise StrategyError("only memory strategies receive trial history")
    if local_setting == REMOVED:
        return LocalResponse(1, True, 0)

    if strategy.kind is LhvKind.MEMORY_PR:
        if history is None:
            history = TrialHistory(0, np.empty(0, dtype=np.int64))
        predicted = memory_prediction(strategy, site, history)
        if predicted is not None:
            if site is Site.A:
                return LocalResponse(1)
            return LocalResponse(-1 if (predicted == 2 and local_setting == 2) else 1)
        fallback = LhvStrategy(LhvKind.SIGN_MODEL, strategy.angles_a, strategy.angles_b)
        return lhv_respond(fallback, lam, local_setting, site)

    batch = lhv_respond_batch(strategy, np.array([lam]), np.array([local_setting]), site)
    return batch.response(0)


def lhv_respond_batch(strategy, lams, settings, side):
    """Vectorized lhv_respond for strategies without memory."""
    site = Site(side)
    if strategy.has_memory:
        raise StrategyError("memory strategies run trial by trial")
    settings = np.asarray(settings, dtype=np.int64)
    n = len(settings)
    removed = settings == REMOVED
    column = np.where(removed, 1, settings) - 1
    detected = np.ones(n, dtype=bool)
    delay = np.zeros(n, dtype=np.int64)

    if strategy.kind is LhvKind.SIGN_MODEL:
        angles = np.asarray(strategy.angles_a if site is Site.A else strategy.angles_b)
        outcome = _sign(np.cos(angles[column] - lams))
        if site is Site.B:
            outcome = -outcome
    elif strategy.kind is LhvKind.FAIR_COIN:
        bit = 1 if site is Site.A else 2
        outcome = np.where(np.asarray(lams, dtype=np.int64) & bit, 1, -1).astype(np.int8)
    else:
        rows = np.asarray(lams, dtype=np.int64)
        table = strategy.table
        if column.max(initial=0) >= table.arity:
            raise StrategyError(f"setting outside the strategy table arity {table.arity}")
        chosen = table.outcomes(site)[rows, column]
        if table.kind is TableKind.DETECT:
            detected = chosen != 0
            outcome = np.where(detected, chosen, 1).astype(np.int8)
        else:
            outcome = chosen.astype(np.int8)
            delay = table.slots(site)[rows, column] * table.slot_ticks

    outcome = np.where(removed, 1, outcome).astype(np.int8)
    detected = np.where(removed, True, detected)
    delay = np.where(removed, 0, delay)
    return ResponseBatch(outcome, detected, delay)
