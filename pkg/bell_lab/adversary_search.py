"""
Optimizers over local strategies and over quantum states.

Local-strategy searches enumerate deterministic strategies and solve a
linear program over their mixtures: a mixture of deterministic local
strategies is the most general (stochastic) local model. Ratio
objectives are handled by fixing the shared denominator (the joint
detection or coincidence level), solving the LP for that slice, and
sweeping the level.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq, linprog, minimize, minimize_scalar

from bell_lab import AdversaryError, DomainError
from bell_lab.coincidence import CoincidencePolicy, PolicyKind
from bell_lab.inequalities import bound_coincidence, bound_efficiency
from bell_lab.keyed_random import Stream, keyed_generator
from bell_lab.pair_source import StrategyTable, TableKind, two_qubit_probabilities

CHSH_SIGNS = {(1, 1): 1.0, (1, 2): 1.0, (2, 1): 1.0, (2, 2): -1.0}
CELLS = tuple(CHSH_SIGNS)
SWEEP_STEP = 1e-3
REFINE_TOLERANCE = 1e-7
WEIGHT_CUTOFF = 1e-12
BOUND_SLACK = 1e-9
MAX_DELAY_SLOTS = 8
EBERHARD_STARTS = 64
NELDER_MEAD_OPTIONS = {"xatol": 1e-9, "fatol": 1e-12, "maxiter": 20000, "maxfev": 40000}
MAX_SCHMIDT = math.pi / 4


class StateRestriction:
    MAXIMAL = "maximal"
    OPTIMAL = "optimal"


@dataclass(frozen=True)
class DetStrategy:
    """Outcome per setting for each side; 0 means no detection."""

    outcomes_a: Tuple[int, ...]
    outcomes_b: Tuple[int, ...]


@dataclass(frozen=True)
class DelayStrategy:
    """Outcome and delay slot per setting for each side."""

    outcomes_a: Tuple[int, ...]
    slots_a: Tuple[int, ...]
    outcomes_b: Tuple[int, ...]
    slots_b: Tuple[int, ...]


def local_det_strategies(arity=2):
    """All 3^arity local detection strategies as an (n, arity) array."""
    return np.array(list(itertools.product((1, -1, 0), repeat=arity)), dtype=np.int64)


def det_strategies(arity=2):
    """All joint detection strategies, A's choice outermost."""
    local = [tuple(row) for row in local_det_strategies(arity).tolist()]
    return [DetStrategy(a, b) for a in local for b in local]


def local_delay_strategies(d, arity=2):
    """All (2d)^arity local delay strategies as (outcomes, slots) arrays."""
    per_setting = [(o, s) for o in (1, -1) for s in range(d)]
    rows = list(itertools.product(per_setting, repeat=arity))
    outcomes = np.array([[o for o, _ in row] for row in rows], dtype=np.int64)
    slots = np.array([[s for _, s in row] for row in rows], dtype=np.int64)
    return outcomes, slots


def delay_strategies(d, arity=2):
    outcomes, slots = local_delay_strategies(d, arity)
    local = list(zip(map(tuple, outcomes.tolist()), map(tuple, slots.tolist())))
    return [DelayStrategy(oa, sa, ob, sb) for oa, sa in local for ob, sb in local]


def _joint(local_a, local_b):
    """Row-aligned copies so that joint row r = (a[r // nb], b[r % nb])."""
    na, nb = len(local_a), len(local_b)
    return np.repeat(local_a, nb, axis=0), np.tile(local_b, (na, 1))


@dataclass(frozen=True, eq=False)
class AdversaryResult:
    value: float
    level: float
    witness: StrategyTable
    bound: float


@dataclass(frozen=True)
class MixtureValues:
    chsh: float
    eta: float
    gamma: float
    ch: float
    correlations: dict


def _solve_slice(objective, equal_rows, level, upper_rows=None):
    """max objective.q s.t. equal_rows.q = level, sum q = 1, upper_rows.q <= 0, q >= 0."""
    n = objective.shape[0]
    a_eq = np.vstack([equal_rows, np.ones((1, n))])
    b_eq = np.concatenate([np.full(len(equal_rows), level), [1.0]])
    result = linprog(
        -objective,
        A_ub=upper_rows,
        b_ub=None if upper_rows is None else np.zeros(len(upper_rows)),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
    )
    if result.status != 0:
        return None
    return -result.fun / level, result.x


def _sweep(solve, lo, hi, step):
    """Largest slice value over [lo, hi]; returns (value, level, weights).

    Levels are scanned from hi downwards; the best grid level is then
    refined to REFINE_TOLERANCE. Ties go to the larger level.
    """
    levels = np.unique(np.concatenate([np.arange(hi, lo, -step), [lo, hi]]))[::-1]
    best = None
    for level in levels:
        solved = solve(float(level))
        if solved is None:
            continue
        if best is None or solved[0] > best[0] + REFINE_TOLERANCE:
            best = (solved[0], float(level), solved[1])
    if best is None:
        raise AdversaryError(f"no feasible mixture for levels in [{lo}, {hi}]")

    value, level, _ = best

    def shortfall(x):
        solved = solve(x)
        return -math.inf if solved is None else solved[0] - (value - REFINE_TOLERANCE)

    # Push the level up to the edge of the plateau
    upper = min(hi, level + step)
    if upper > level and shortfall(upper) < 0:
        level = brentq(lambda x: 1.0 if shortfall(x) >= 0 else -1.0, level, upper, xtol=1e-9)

    # Interior maximum between grid points
    low = max(lo, level - step)
    high = min(hi, level + step)
    if high > low:
        refined = minimize_scalar(
            lambda x: -(solve(x) or (-math.inf, None))[0],
            bounds=(low, high),
            method="bounded",
            options={"xatol": REFINE_TOLERANCE},
        )
        if refined.success and -refined.fun > value + REFINE_TOLERANCE:
            level = float(refined.x)

    solved = solve(level)
    return solved[0], level, solved[1]


def _det_cell_arrays(arity=2):
    local = local_det_strategies(arity)
    out_a, out_b = _joint(local, local)
    rows = {}
    for i, j in CELLS:
        det_a = (out_a[:, i - 1] != 0).astype(np.float64)
        det_b = (out_b[:, j - 1] != 0).astype(np.float64)
        rows[(i, j)] = {
            "both": det_a * det_b,
            "product": (out_a[:, i - 1] * out_b[:, j - 1]).astype(np.float64),
            "a": det_a,
            "b": det_b,
        }
    return out_a, out_b, rows


def _witness(weights, **columns):
    keep = weights > WEIGHT_CUTOFF
    weights = weights[keep] / weights[keep].sum()
    return {name: value[keep] for name, value in columns.items()}, weights


def max_conditional_chsh(eta_a, eta_b, step=SWEEP_STEP):
    """Largest conditional CHSH of a local mixture whose conditional
    efficiencies are at least eta_a (A given B) and eta_b (B given A)."""
    for name, eta in (("eta_a", eta_a), ("eta_b", eta_b)):
        if not 0 < eta <= 1:
            raise DomainError(f"{name} must lie in (0, 1], got {eta}")
    out_a, out_b, rows = _det_cell_arrays()
    objective = sum(CHSH_SIGNS[cell] * rows[cell]["product"] for cell in CELLS)
    equal_rows = np.array([rows[cell]["both"] for cell in CELLS])
    upper_rows = np.array(
        [eta_a * rows[cell]["b"] - rows[cell]["both"] for cell in CELLS]
        + [eta_b * rows[cell]["a"] - rows[cell]["both"] for cell in CELLS]
    )

    value, level, weights = _sweep(lambda x: _solve_slice(objective, equal_rows, x, upper_rows), step, 1.0, step)
    bound = bound_efficiency(min(eta_a, eta_b))
    if value > bound + BOUND_SLACK:
        raise AdversaryError(f"optimizer value {value} exceeds the efficiency bound {bound}")
    columns, weights = _witness(weights, outcome_a=out_a, outcome_b=out_b)
    witness = StrategyTable(TableKind.DETECT, weights, columns["outcome_a"], columns["outcome_b"])
    return AdversaryResult(value, level, witness, bound)


def _delay_cell_arrays(d, w):
    outcomes, slots = local_delay_strategies(d)
    out_a, out_b = _joint(outcomes, outcomes)
    slot_a, slot_b = _joint(slots, slots)
    rows = {}
    for i, j in CELLS:
        coincident = (np.abs(slot_a[:, i - 1] - slot_b[:, j - 1]) <= w).astype(np.float64)
        rows[(i, j)] = {
            "coincident": coincident,
            "product": (out_a[:, i - 1] * out_b[:, j - 1]) * coincident,
        }
    return out_a, out_b, slot_a, slot_b, rows


def max_windowed_chsh(gamma_min, d, w=1, slot_ticks=1, step=SWEEP_STEP):
    """Largest coincidence-conditioned CHSH of a mixture of delay strategies
    whose per-setting-pair coincidence probability is at least gamma_min."""
    if not 0 < gamma_min <= 1:
        raise DomainError(f"gamma_min must lie in (0, 1], got {gamma_min}")
    if not 2 <= d <= MAX_DELAY_SLOTS:
        raise DomainError(f"delay slots must lie in 2..{MAX_DELAY_SLOTS}, got {d}")
    if w < 0:
        raise DomainError("window must be nonnegative")
    out_a, out_b, slot_a, slot_b, rows = _delay_cell_arrays(d, w)
    objective = sum(CHSH_SIGNS[cell] * rows[cell]["product"] for cell in CELLS)
    equal_rows = np.array([rows[cell]["coincident"] for cell in CELLS])

    value, level, weights = _sweep(lambda x: _solve_slice(objective, equal_rows, x), gamma_min, 1.0, step)
    bound = bound_coincidence(level)
    if value > 6.0 / level - 4.0 + BOUND_SLACK:
        raise AdversaryError(f"optimizer value {value} exceeds the coincidence bound at gamma {level}")
    columns, weights = _witness(weights, outcome_a=out_a, outcome_b=out_b, slot_a=slot_a, slot_b=slot_b)
    witness = StrategyTable(
        TableKind.DELAY,
        weights,
        columns["outcome_a"],
        columns["outcome_b"],
        columns["slot_a"],
        columns["slot_b"],
        slot_ticks=slot_ticks,
        window_slots=w,
    )
    return AdversaryResult(value, level, witness, bound)


def window_for_slots(w, slot_ticks):
    """Window width in ticks that accepts slot differences up to w and no more."""
    return (2 * w + 1) * slot_ticks


def _mixture_coincident(mixture, policy, i, j):
    if mixture.kind is TableKind.DETECT or policy.kind in (PolicyKind.TRIAL, PolicyKind.SLOTS, PolicyKind.HERALDED):
        return np.ones(len(mixture), dtype=bool)
    delta = (mixture.slot_a[:, i - 1] - mixture.slot_b[:, j - 1]) * mixture.slot_ticks
    return np.array([policy.is_coincident(int(x), i, j) for x in delta])


def mixture_values(mixture, policy=None):
    """Exact population values of a strategy mixture under a coincidence policy.

    Returns the conditional CHSH, the efficiency (min conditional detection
    probability), gamma (min coincidence probability) and the CH value
    restricted to coincidences with unconditional singles.
    """
    if policy is None:
        policy = CoincidencePolicy(PolicyKind.TRIAL)
    q = mixture.weights
    correlations = {}
    joint_plus = {}
    etas = []
    gammas = []
    for i, j in CELLS:
        oa = mixture.outcome_a[:, i - 1]
        ob = mixture.outcome_b[:, j - 1]
        det_a = oa != 0
        det_b = ob != 0
        coincident = _mixture_coincident(mixture, policy, i, j) & det_a & det_b
        both = float(q @ coincident)
        if both <= 0:
            raise AdversaryError(f"mixture never registers a coincidence in cell ({i}, {j})")
        correlations[(i, j)] = float(q @ (oa * ob * coincident)) / both
        joint_plus[(i, j)] = float(q @ ((oa > 0) & (ob > 0) & coincident))
        etas.append(both / float(q @ det_b))
        etas.append(both / float(q @ det_a))
        gammas.append(both)

    e = correlations
    chsh = abs(e[(1, 1)] + e[(1, 2)]) + abs(e[(2, 1)] - e[(2, 2)])
    single_a = float(q @ (mixture.outcome_a[:, 0] > 0))
    single_b = float(q @ (mixture.outcome_b[:, 0] > 0))
    ch = joint_plus[(1, 1)] + joint_plus[(1, 2)] + joint_plus[(2, 1)] - joint_plus[(2, 2)] - single_a - single_b
    return MixtureValues(chsh, min(etas), min(gammas), ch, correlations)


# Quantum optimizer


@dataclass(frozen=True)
class EberhardOptimum:
    value: float
    r: float
    angles: Tuple[float, float, float, float]
    eta_a: float
    eta_b: float


def _schmidt(x):
    return MAX_SCHMIDT / (1.0 + math.exp(-x))


def ch_terms(r, a1, a2, b1, b2):
    """(S, P(A1 = +1), P(B1 = +1)) with S = P11 + P12 + P21 - P22 of (++) outcomes."""
    p = two_qubit_probabilities(r, np.array([a1, a1, a2, a2]), np.array([b1, b2, b1, b2]))[:, 0, 0]
    s = p[0] + p[1] + p[2] - p[3]
    single_a = math.cos(r) ** 2 * math.cos(a1) ** 2 + math.sin(r) ** 2 * math.sin(a1) ** 2
    single_b = math.cos(r) ** 2 * math.cos(b1) ** 2 + math.sin(r) ** 2 * math.sin(b1) ** 2
    return float(s), single_a, single_b


def ch_with_efficiency(eta_a, eta_b, r, a1, a2, b1, b2):
    """CH with coincidences scaled by eta_a eta_b and singles by eta."""
    s, single_a, single_b = ch_terms(r, a1, a2, b1, b2)
    return eta_a * eta_b * s - eta_a * single_a - eta_b * single_b


def _unpack(params, restriction):
    if restriction == StateRestriction.MAXIMAL:
        return MAX_SCHMIDT, params
    return _schmidt(params[0]), params[1:]


def _starts(restriction, starts, seed):
    rng = keyed_generator(seed, Stream.OPTIMIZER)
    angles = rng.uniform(0.0, math.pi, size=(starts, 4))
    if restriction == StateRestriction.MAXIMAL:
        return angles
    schmidt = rng.uniform(-4.0, 4.0, size=(starts, 1))
    return np.hstack([schmidt, angles])


def _multistart(objective, restriction, starts, seed):
    best = None
    for x0 in _starts(restriction, starts, seed):
        result = minimize(objective, x0, method="Nelder-Mead", options=NELDER_MEAD_OPTIONS)
        if best is None or result.fun < best.fun:
            best = result
    return best


def optimize_eberhard(eta_a, eta_b, restriction=StateRestriction.OPTIMAL, starts=EBERHARD_STARTS, seed=0):
    """Maximize the CH value over the state angle r and the four analyzer angles."""
    for name, eta in (("eta_a", eta_a), ("eta_b", eta_b)):
        if not 0 < eta <= 1:
            raise DomainError(f"{name} must lie in (0, 1], got {eta}")

    def objective(params):
        r, angles = _unpack(params, restriction)
        return -ch_with_efficiency(eta_a, eta_b, r, *angles)

    best = _multistart(objective, restriction, starts, seed)
    r, angles = _unpack(best.x, restriction)
    return EberhardOptimum(-float(best.fun), float(r), tuple(float(a) for a in angles), eta_a, eta_b)


def critical_eta(restriction=StateRestriction.OPTIMAL, eta_a=None, starts=EBERHARD_STARTS, seed=0):
    """Smallest efficiency at which some state and angles give CH > 0.

    Symmetric case (eta_a None): minimize (P(A1) + P(B1)) / S. With eta_a
    fixed: minimize eta_a P(A1) / (eta_a S - P(B1)) for eta_b.
    """

    def ratio(params):
        r, angles = _unpack(params, restriction)
        s, single_a, single_b = ch_terms(r, *angles)
        if eta_a is None:
            return (single_a + single_b) / s if s > 1e-12 else 1e6
        denominator = eta_a * s - single_b
        return eta_a * single_a / denominator if denominator > 1e-12 else 1e6

    best = _multistart(ratio, restriction, starts, seed)
    return float(best.fun)


def critical_eta_curve(restriction, eta_grid, eta_a=None, starts=EBERHARD_STARTS, seed=0):
    """Optimized CH value per efficiency on a grid, plus the crossing point.

    With eta_a given, only eta_b runs over the grid. Returns a DataFrame
    with columns eta, value, r, a1, a2, b1, b2 and the critical efficiency
    (grid crossing by linear interpolation and the directly minimized ratio
    in frame.attrs).
    """
    rows = []
    for eta in eta_grid:
        if not 0 < eta <= 1:
            raise DomainError(f"grid efficiency must lie in (0, 1], got {eta}")
        optimum = optimize_eberhard(eta_a if eta_a is not None else eta, eta, restriction, starts, seed)
        rows.append([eta, optimum.value, optimum.r, *optimum.angles])
    frame = pd.DataFrame(rows, columns=["eta", "value", "r", "a1", "a2", "b1", "b2"])
    frame.attrs["grid_crossing"] = _interpolated_crossing(frame["eta"].to_numpy(), frame["value"].to_numpy())
    frame.attrs["critical_eta"] = critical_eta(restriction, eta_a, starts, seed)
    return frame


def _interpolated_crossing(x, y):
    """First upward zero crossing of y(x) by linear interpolation, or None."""
    order = np.argsort(x)
    x, y = x[order], y[order]
    for k in range(1, len(x)):
        if y[k - 1] <= 0 < y[k]:
            return float(x[k - 1] + (x[k] - x[k - 1]) * (-y[k - 1]) / (y[k] - y[k - 1]))
    return None


def efficiency_curve(eta_grid, step=SWEEP_STEP):
    """max_conditional_chsh per efficiency next to min(4, 4/eta - 2)."""
    rows = []
    witnesses = []
    for eta in eta_grid:
        result = max_conditional_chsh(eta, eta, step)
        rows.append([eta, result.value, bound_efficiency(eta), result.level])
        witnesses.append(result.witness)
    frame = pd.DataFrame(rows, columns=["eta", "value", "closed_form", "level"])
    return frame, witnesses


def coincidence_curve(gamma_grid, d, w=1, slot_ticks=1, step=SWEEP_STEP):
    """max_windowed_chsh per coincidence level next to the 6/gamma - 4 envelope."""
    rows = []
    witnesses = []
    for gamma in gamma_grid:
        result = max_windowed_chsh(gamma, d, w, slot_ticks, step)
        rows.append([gamma, result.value, bound_coincidence(gamma), result.level])
        witnesses.append(result.witness)
    frame = pd.DataFrame(rows, columns=["gamma", "value", "envelope", "level"])
    return frame, witnesses


def eberhard_table(eta_grid, starts=EBERHARD_STARTS, seed=0):
    """Thresholds and CH maxima for the maximal and optimal states and the eta_a = 1 case."""
    curves = {
        "maximal": critical_eta_curve(StateRestriction.MAXIMAL, eta_grid, None, starts, seed),
        "optimal": critical_eta_curve(StateRestriction.OPTIMAL, eta_grid, None, starts, seed),
        "eta_a_1": critical_eta_curve(StateRestriction.OPTIMAL, eta_grid, 1.0, starts, seed),
    }
    thresholds = pd.DataFrame(
        [[name, frame.attrs["critical_eta"], frame.attrs["grid_crossing"]] for name, frame in curves.items()],
        columns=["case", "critical_eta", "grid_crossing"],
    )
    return thresholds, curves
