"""
Bell-type inequalities evaluated on a CorrelationTable, and the bounds
that replace the local-realist bound when detection or coincidence
losses are present.

Every result is in <=-form: violated iff value > bound. Extra bounds
with their own assumption labels ride along in `alternatives`.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

from bell_lab import DomainError, TableError
from bell_lab.coincidence import coincidence_stats
from bell_lab.correlation_table import EXCLUDE
from bell_lab.event_model import REMOVED, Site

LOCAL_REALISM = "none"
FAIR_SAMPLING = "assumes fair sampling"
FAIR_COINCIDENCE = "assumes fair coincidence"
NO_ENHANCEMENT = "assumes no-enhancement"
IDEAL_POLARIZERS = "assumes no-enhancement, ideal polarizers"
ROTATIONAL_INVARIANCE = "assumes rotational invariance"
PERFECT_ANTICORRELATION = "assumes perfect anticorrelation"
APPARENT_EFFICIENCY_CONJECTURE = "conjecture: apparent efficiency"
NOT_ESTABLISHED = "bound not established for this policy"
FRANSON_GEOMETRY = "franson_geometry = phase delay near detectors"
EQUAL_TRIALS = "assumes equal trials per setting pair"

ANTICORRELATION_TOLERANCE = 0.01
ALGEBRAIC_MAX = 4.0


@dataclass(frozen=True)
class Bound:
    value: float
    label: str = LOCAL_REALISM
    established: bool = True
    source: str = ""


@dataclass(frozen=True)
class InequalityResult:
    name: str
    value: float
    bound: Bound
    lower_bound: Optional[float] = None
    alternatives: Tuple[Bound, ...] = ()
    flags: Tuple[str, ...] = ()
    details: Dict[str, float] = field(default_factory=dict)
    provenance: str = ""
    skipped: Optional[str] = None

    @classmethod
    def skip(cls, name, reason):
        return cls(name, math.nan, Bound(math.nan, LOCAL_REALISM), skipped=reason)

    @property
    def violated(self):
        if self.skipped:
            return False
        return self.value > self.bound.value

    @property
    def margin(self):
        return self.value - self.bound.value

    @property
    def assumptions(self):
        labels = [self.bound.label]
        labels.extend(b.label for b in self.alternatives)
        return tuple(dict.fromkeys(label for label in labels if label != LOCAL_REALISM))


# Bounds


def bound_efficiency(eta):
    """Conditional-CHSH bound at efficiency eta: min(4, 4/eta - 2)."""
    if not 0 < eta <= 1:
        raise DomainError(f"efficiency must lie in (0, 1], got {eta}")
    return min(ALGEBRAIC_MAX, 4.0 / eta - 2.0)


def bound_coincidence(gamma):
    """Coincidence-conditioned CHSH bound: min(4, 6/gamma - 4)."""
    if not 0 < gamma <= 1:
        raise DomainError(f"coincidence probability must lie in (0, 1], got {gamma}")
    return min(ALGEBRAIC_MAX, 6.0 / gamma - 4.0)


def bound_event_ready(eta):
    """Bound 4/eta - 2 for coincidence-conditioned CHSH with event-ready trials.

    Not capped at the algebraic maximum: a value above 4 means the bound
    is useless for the setup (a Franson interferometer gives 6).
    """
    if not 0 < eta <= 1:
        raise DomainError(f"efficiency must lie in (0, 1], got {eta}")
    return 4.0 / eta - 2.0


def _check_chain_length(n_terms):
    if n_terms < 4 or n_terms % 2:
        raise DomainError(f"chained inequalities need an even number of terms >= 4, got {n_terms}")


def bound_chained(n_terms):
    _check_chain_length(n_terms)
    return float(n_terms - 2)


def bound_franson(n_terms):
    """Bound n - 1 of an n-term chain in the Franson geometry."""
    _check_chain_length(n_terms)
    return float(n_terms - 1)


def critical_eta_for_assignment(nodetect_value):
    """Efficiency above which the maximally entangled state violates CHSH
    when non-detections are given a fixed value."""
    if nodetect_value == 0:
        return 2.0**-0.25
    if nodetect_value == -1:
        return 2.0 * math.sqrt(2.0) - 2.0
    raise DomainError(f"nodetect value must be 0 or -1, got {nodetect_value}")


# Helpers


def _require_arity(table, arity):
    if table.arity < arity:
        raise TableError(f"table has {table.arity} settings per side, {arity} needed")


def _correlations(table, cells, nodetect_value):
    values = {}
    for i, j in cells:
        n, first, _ = table.moments(i, j, nodetect_value)
        if n <= 0:
            raise TableError(f"missing cell ({i}, {j})")
        values[(i, j)] = first / n
    return values


def _policy_flags(table):
    flags = list(table.flags)
    flags.append(f"policy {table.policy}")
    return tuple(dict.fromkeys(flags))


def _efficiency_bounds(table):
    """Primary and alternative bounds for coincidence-only (EXCLUDE) correlations."""
    stats = coincidence_stats(table)
    eta = stats.eta
    alternatives = [Bound(2.0, FAIR_SAMPLING, source="fair sampling")]
    details = {"eta": eta}
    if table.trial_structured:
        primary = Bound(bound_efficiency(eta), source="efficiency bound at eta " + _fmt(eta))
        if stats.gamma_min is not None and stats.gamma_min > 0:
            details["gamma"] = stats.gamma_min
            alternatives.append(
                Bound(bound_coincidence(stats.gamma_min), source="coincidence bound at gamma " + _fmt(stats.gamma_min))
            )
        return primary, alternatives, details

    details["gamma"] = math.nan
    alternatives.insert(0, Bound(2.0, FAIR_COINCIDENCE, source="fair coincidence"))
    primary = Bound(
        min(ALGEBRAIC_MAX, 6.0 / eta - 4.0) if eta > 0 else ALGEBRAIC_MAX,
        APPARENT_EFFICIENCY_CONJECTURE,
        established=False,
        source="coincidence bound at apparent efficiency",
    )
    return primary, alternatives, details


def _fmt(value):
    return f"{value:.4f}"


# Evaluators


def eval_chsh(table, nodetect_value=EXCLUDE, event_ready_eta=None):
    """|E11 + E12| + |E21 - E22|.

    A numeric nodetect_value scores every missing detection with that
    value and keeps bound 2. EXCLUDE conditions on coincidences and takes
    the efficiency bound (trial policies) or the apparent-efficiency
    conjecture (window policies); event_ready_eta swaps in the
    event-ready bound.
    """
    _require_arity(table, 2)
    e = _correlations(table, ((1, 1), (1, 2), (2, 1), (2, 2)), nodetect_value)
    value = abs(e[(1, 1)] + e[(1, 2)]) + abs(e[(2, 1)] - e[(2, 2)])
    details = {f"E{i}{j}": e[(i, j)] for i, j in e}

    if nodetect_value != EXCLUDE:
        return InequalityResult(
            "CHSH",
            value,
            Bound(2.0, source="CHSH"),
            flags=_policy_flags(table),
            details=details,
            provenance=f"CHSH, nodetect scored {nodetect_value}",
        )

    primary, alternatives, extra = _efficiency_bounds(table)
    details.update(extra)
    if event_ready_eta is not None:
        alternatives.insert(0, primary)
        primary = Bound(bound_event_ready(event_ready_eta), source="event-ready bound at eta " + _fmt(event_ready_eta))
    if table.metadata.get("source.kind") == "franson":
        alternatives.append(Bound(bound_franson(4), FRANSON_GEOMETRY, source="franson refinement"))
    return InequalityResult(
        "CHSH",
        value,
        primary,
        alternatives=tuple(alternatives),
        flags=_policy_flags(table),
        details=details,
        provenance="CHSH, conditioned on coincidence",
    )


def eval_bell_original(table):
    """|E21 - E22| <= 1 + E12 for a1 = b1, with E11 = -1 assumed."""
    _require_arity(table, 2)
    pair = table.angle_pair(1, 1)
    if pair is not None and not math.isclose(pair[0], pair[1], abs_tol=1e-9):
        raise TableError("no equal setting pair configured: a1 != b1")
    e = _correlations(table, ((1, 1), (1, 2), (2, 1), (2, 2)), EXCLUDE)
    value = abs(e[(2, 1)] - e[(2, 2)])
    defect = 1.0 + e[(1, 1)]
    flags = list(_policy_flags(table))
    bound = Bound(1.0 + e[(1, 2)], source="original Bell bound")
    if defect > ANTICORRELATION_TOLERANCE:
        flags.append(f"anticorrelation_defect = {defect:.4g}")
        bound = Bound(bound.value, PERFECT_ANTICORRELATION, established=False, source=bound.source)
    return InequalityResult(
        "Bell original",
        value,
        bound,
        flags=tuple(flags),
        details={"E11": e[(1, 1)], "E12": e[(1, 2)], "E21": e[(2, 1)], "E22": e[(2, 2)], "anticorrelation_defect": defect},
        provenance="original Bell inequality",
    )


class ChVariant(str, Enum):
    COUNTS = "counts"
    PROBABILITIES = "probabilities"


def _ch_terms(table, variant):
    """(coincidence terms, single terms, normalization) of the CH expression."""
    if variant == ChVariant.COUNTS:
        joint = [table.joint[i, j, 0, 0] for i, j in ((1, 1), (1, 2), (2, 1), (2, 2))]
        single_a = table.joint[1, 1, 0, :].sum() + table.a_only[1, 1, 0]
        single_b = table.joint[1, 1, :, 0].sum() + table.b_only[1, 1, 0]
        return joint, (float(single_a), float(single_b))

    joint = [table.probability(i, j) for i, j in ((1, 1), (1, 2), (2, 1), (2, 2))]
    singles = []
    for site in (Site.A, Site.B):
        count = 0.0
        norm = 0.0
        for k in range(1, table.arity + 1):
            i, j = (1, k) if site is Site.A else (k, 1)
            count += table.single_probability(site, i, j) * table.normalizer(i, j)
            norm += table.normalizer(i, j)
        singles.append(count / norm)
    return joint, tuple(singles)


def _ch_value(table, variant):
    _require_arity(table, 2)
    if table.trials is None and table.exposure is None and variant != ChVariant.COUNTS:
        raise TableError("missing singles: no trial counts or exposure")
    joint, (single_a, single_b) = _ch_terms(table, variant)
    if single_a <= 0 or single_b <= 0:
        raise TableError("missing singles for setting 1")
    value = joint[0] + joint[1] + joint[2] - joint[3] - single_a - single_b
    details = {
        "P11": joint[0],
        "P12": joint[1],
        "P21": joint[2],
        "P22": joint[3],
        "PA1": single_a,
        "PB1": single_b,
    }
    return float(value), details


def eval_ch(table, variant=ChVariant.PROBABILITIES):
    """P11 + P12 + P21 - P22 - P(A1) - P(B1) in [-1, 0]; COUNTS inserts raw counts."""
    value, details = _ch_value(table, variant)
    flags = list(_policy_flags(table))
    bound = Bound(0.0, source="CH")
    lower = -1.0
    if variant == ChVariant.COUNTS:
        bound = Bound(0.0, EQUAL_TRIALS, source="CH in counts")
        lower = None
    elif not table.ch_bound_established:
        bound = Bound(0.0, NOT_ESTABLISHED, established=False, source="CH")
        lower = None
    return InequalityResult(
        "CH" if variant == ChVariant.PROBABILITIES else "CH counts",
        value,
        bound,
        lower_bound=lower,
        flags=tuple(flags),
        details=details,
        provenance=f"CH, {ChVariant(variant).value}",
    )


def eval_ch_coincidence(table):
    """CH restricted to coincidences, with unconditional singles; bound 0.

    The bound holds for trial, slot, heralded and nested asymmetric
    policies; plain windows carry the `not established` label.
    """
    value, details = _ch_value(table, ChVariant.PROBABILITIES)
    if table.ch_bound_established:
        bound = Bound(0.0, LOCAL_REALISM, source="CH with coincidence")
    else:
        bound = Bound(0.0, NOT_ESTABLISHED, established=False, source="CH with coincidence")
    flags = _policy_flags(table)
    if not table.ch_bound_established:
        flags = flags + (NOT_ESTABLISHED,)
    return InequalityResult(
        "CH coincidence",
        value,
        bound,
        flags=flags,
        details=details,
        provenance="CH with coincidence restriction",
    )


def _require_removed(table, cells):
    for i, j in cells:
        try:
            table.normalizer(i, j)
        except TableError:
            raise TableError("missing REMOVED analyzer data") from None


def eval_rate_chsh(table):
    """R11 + R12 + |R21 - R22| <= max(R(A_i) + R(B_j)), R(A_i) with B's analyzer removed."""
    _require_arity(table, 2)
    _require_removed(table, [(1, REMOVED), (2, REMOVED), (REMOVED, 1), (REMOVED, 2)])
    rate = {(i, j): table.probability(i, j) for i in range(3) for j in range(3) if (i, j) != (REMOVED, REMOVED)}
    value = rate[(1, 1)] + rate[(1, 2)] + abs(rate[(2, 1)] - rate[(2, 2)])
    bound = max(rate[(i, REMOVED)] + rate[(REMOVED, j)] for i in (1, 2) for j in (1, 2))
    details = {f"R{i}{j}".replace("0", "inf"): v for (i, j), v in rate.items()}
    try:
        r0 = table.probability(REMOVED, REMOVED)
    except TableError:
        r0 = math.nan
    if r0 and r0 > 0:
        details["lhs_over_r0"] = value / r0
        details["rhs_over_r0"] = bound / r0
    return InequalityResult(
        "rate CHSH",
        value,
        Bound(bound, FAIR_SAMPLING, source="detection-rate CHSH"),
        flags=_policy_flags(table),
        details=details,
        provenance="CHSH in detection rates",
    )


def eval_no_enhancement_chsh(table, conditional=False):
    """CHSH-like forms under no-enhancement.

    Unconditional: correlations scoring non-detections 0 against
    2 P(A_inf = B_inf = 1). Conditional: coincidence correlations against
    2, valid with ideal polarizers; reports the measured polarizer
    transmission.
    """
    _require_arity(table, 2)
    _require_removed(table, [(REMOVED, REMOVED)])
    both_removed = table.probability(REMOVED, REMOVED)
    detect_removed = table.coincidences(REMOVED, REMOVED) / table.normalizer(REMOVED, REMOVED)
    if conditional:
        e = _correlations(table, ((1, 1), (1, 2), (2, 1), (2, 2)), EXCLUDE)
        rates = [table.coincidences(i, j) / table.normalizer(i, j) for i in (1, 2) for j in (1, 2)]
        transmission = (sum(rates) / len(rates)) / detect_removed if detect_removed > 0 else math.nan
        bound = Bound(2.0, IDEAL_POLARIZERS, source="no-enhancement, conditional")
        details = {"polarizer_transmission": transmission}
    else:
        e = _correlations(table, ((1, 1), (1, 2), (2, 1), (2, 2)), 0)
        bound = Bound(2.0 * both_removed, NO_ENHANCEMENT, source="no-enhancement CHSH")
        details = {"P_inf_inf": both_removed}
    value = abs(e[(1, 1)] + e[(1, 2)]) + abs(e[(2, 1)] - e[(2, 2)])
    details.update({f"E{i}{j}": e[(i, j)] for i, j in e})
    return InequalityResult(
        "no-enhancement CHSH" + (" conditional" if conditional else ""),
        value,
        bound,
        flags=_policy_flags(table),
        details=details,
        provenance="CHSH-like form under no-enhancement",
    )


def eval_no_enhancement(table):
    """CH with polarizers removed in the single terms; bounds (-P(A_inf = B_inf = 1), 0)."""
    _require_arity(table, 2)
    _require_removed(table, [(1, REMOVED), (REMOVED, 1), (REMOVED, REMOVED)])
    p = {(i, j): table.probability(i, j) for i, j in ((1, 1), (1, 2), (2, 1), (2, 2))}
    value = (
        p[(1, 1)] + p[(1, 2)] + p[(2, 1)] - p[(2, 2)]
        - table.probability(1, REMOVED)
        - table.probability(REMOVED, 1)
    )
    both_removed = table.probability(REMOVED, REMOVED)
    details = {f"P{i}{j}": v for (i, j), v in p.items()}
    details["P1inf"] = table.probability(1, REMOVED)
    details["Pinf1"] = table.probability(REMOVED, 1)
    details["P_inf_inf"] = both_removed

    chsh_like = eval_no_enhancement_chsh(table)
    details["chsh_like_value"] = chsh_like.value
    details["chsh_like_bound"] = chsh_like.bound.value
    return InequalityResult(
        "no-enhancement CH",
        value,
        Bound(0.0, NO_ENHANCEMENT, source="no-enhancement CH"),
        lower_bound=-both_removed,
        alternatives=(chsh_like.bound,),
        flags=_policy_flags(table),
        details=details,
        provenance="CH under no-enhancement",
    )


def chain_cells(n_terms):
    """Cells of the n-term chain: (i, i) and (i, i+1) for i < k, then (k, k) and (k, 1)."""
    k = n_terms // 2
    cells = []
    for i in range(1, k):
        cells.append(((i, i), (i, i + 1), 1))
    cells.append(((k, k), (k, 1), -1))
    return cells


def eval_chained(table, n_terms, nodetect_value=EXCLUDE, franson=False):
    """Sum over i < k of |E_ii + E_i,i+1|, plus |E_kk - E_k1|; bound n - 2."""
    _check_chain_length(n_terms)
    k = n_terms // 2
    _require_arity(table, k)
    value = 0.0
    details = {}
    for first, second, sign in chain_cells(n_terms):
        e = _correlations(table, (first, second), nodetect_value)
        value += abs(e[first] + sign * e[second])
        details.update({f"E{i}{j}": e[(i, j)] for i, j in e})

    if franson:
        bound = Bound(bound_franson(n_terms), FRANSON_GEOMETRY, source="chained, franson refinement")
        alternatives = (Bound(bound_chained(n_terms), FAIR_SAMPLING, source="chained"),)
    elif nodetect_value == EXCLUDE:
        bound = Bound(bound_chained(n_terms), FAIR_SAMPLING, source="chained")
        alternatives = ()
    else:
        bound = Bound(bound_chained(n_terms), source="chained")
        alternatives = ()
    return InequalityResult(
        f"chained {n_terms}",
        value,
        bound,
        alternatives=alternatives,
        flags=_policy_flags(table),
        details=details,
        provenance=f"chained Bell inequality, {n_terms} terms",
    )


def eval_symmetric_chsh(table, nodetect_value=EXCLUDE):
    """|3 E(phi) - E(3 phi)| <= 2 with E(phi) the mean of cells (1,1), (1,2), (2,1)."""
    _require_arity(table, 2)
    e = _correlations(table, ((1, 1), (1, 2), (2, 1), (2, 2)), nodetect_value)
    phi_cells = [e[(1, 1)], e[(1, 2)], e[(2, 1)]]
    mean = sum(phi_cells) / 3
    value = abs(3 * mean - e[(2, 2)])
    return InequalityResult(
        "symmetric CHSH",
        value,
        Bound(2.0, ROTATIONAL_INVARIANCE, source="rotationally invariant CHSH"),
        flags=_policy_flags(table),
        details={"E_phi": mean, "E_3phi": e[(2, 2)], "symmetry_deviation": max(phi_cells) - min(phi_cells)},
        provenance="CHSH under rotational invariance",
    )
