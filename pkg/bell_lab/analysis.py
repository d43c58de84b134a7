"""
Analysis pipeline: event log -> pairing -> correlation table -> inequality
results and hypothesis tests.

Every inequality that cannot be evaluated on the data at hand becomes a
skipped result with its reason; the rest of the analysis goes on.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Tuple

from bell_lab import AccidentalsError, DomainError, TableError, warn
from bell_lab.channel_model import AccidentalEstimate, estimate_accidentals, subtract_accidentals
from bell_lab.coincidence import CoincidenceStats, PolicyKind, coincidence_stats, half_width, pair_events
from bell_lab.correlation_table import CorrelationTable, tabulate
from bell_lab.event_model import Mode
from bell_lab.inequalities import (
    ChVariant,
    InequalityResult,
    eval_bell_original,
    eval_ch,
    eval_ch_coincidence,
    eval_chained,
    eval_chsh,
    eval_no_enhancement,
    eval_no_enhancement_chsh,
    eval_rate_chsh,
    eval_symmetric_chsh,
)
from bell_lab.run_config import AnalysisOptions
from bell_lab.schedule import schedule_from_header
from bell_lab.setting_source import SettingKind
from bell_lab.statistics import TestReport, chsh_test_report, coarse_grain

PREDICTABLE_WARNING = "settings predictable - memory loophole open"
SUBTRACTED_SUFFIX = " (subtracted)"
RESULT_NAMES = {
    "chsh": "CHSH",
    "bell_original": "Bell original",
    "ch": "CH",
    "ch_counts": "CH counts",
    "ch_coincidence": "CH coincidence",
    "rate_chsh": "rate CHSH",
    "no_enhancement": "no-enhancement CH",
    "no_enhancement_chsh": "no-enhancement CHSH",
    "symmetric_chsh": "symmetric CHSH",
}


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    source: str
    mode: str
    arity: int
    policy: str
    table: CorrelationTable
    stats: CoincidenceStats
    results: Tuple[InequalityResult, ...]
    test: Optional[TestReport] = None
    test_skipped: Optional[str] = None
    accidentals: Optional[AccidentalEstimate] = None
    warnings: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def flags(self):
        return self.table.flags


def _evaluate(name, table, options):
    nodetect = options.nodetect_value
    if name == "chsh":
        return [eval_chsh(table, nodetect, options.event_ready_eta)]
    if name == "bell_original":
        return [eval_bell_original(table)]
    if name == "ch":
        return [eval_ch(table, ChVariant.PROBABILITIES)]
    if name == "ch_counts":
        return [eval_ch(table, ChVariant.COUNTS)]
    if name == "ch_coincidence":
        return [eval_ch_coincidence(table)]
    if name == "rate_chsh":
        return [eval_rate_chsh(table)]
    if name == "no_enhancement":
        return [eval_no_enhancement(table)]
    if name == "no_enhancement_chsh":
        return [eval_no_enhancement_chsh(table), eval_no_enhancement_chsh(table, conditional=True)]
    if name == "chained":
        return [eval_chained(table, options.chain_terms, nodetect, options.franson)]
    if name == "symmetric_chsh":
        return [eval_symmetric_chsh(table, nodetect)]
    raise ValueError(f"unknown inequality {name}")


def evaluate_all(table, options, suffix=""):
    """Results of every requested inequality, skipped ones included."""
    results = []
    for name in options.inequalities:
        try:
            evaluated = _evaluate(name, table, options)
        except (TableError, DomainError) as e:
            label = f"chained {options.chain_terms}" if name == "chained" else RESULT_NAMES[name]
            evaluated = [InequalityResult.skip(label, str(e))]
        for result in evaluated:
            if suffix:
                result = dataclasses.replace(result, name=result.name + suffix)
            results.append(result)
    return results


def _setting_warnings(log):
    warnings = []
    extras = log.header.extras
    if extras.get("settings.kind") == SettingKind.PERIODIC.value:
        warnings.append(PREDICTABLE_WARNING)
    fallback = int(extras.get("memory.fallback_trials", "0"))
    if fallback:
        warnings.append(f"memory strategy fell back to the sign model in {fallback} trials")
    for message in warnings:
        warn(message)
    return warnings


def _test_report(log, pairing, table, options):
    try:
        betas = None
        if options.subsamples:
            betas = coarse_grain(log, pairing, options.subsamples)
        return chsh_test_report(table, options.nodetect_value, betas), None
    except (TableError, DomainError) as e:
        return None, str(e)


def accidental_width(tau):
    """Number of integer offsets inside a window of width tau."""
    return 2 * half_width(tau) + 1


def analyze_log(log, policy, options=None):
    """Run the full analysis of one log under one coincidence policy."""
    if options is None:
        options = AnalysisOptions()
    schedule = schedule_from_header(log.header)
    pairing = pair_events(log, policy, schedule)
    table = tabulate(log, pairing, schedule)
    warnings = _setting_warnings(log)
    results = evaluate_all(table, options)
    test, test_skipped = _test_report(log, pairing, table, options)

    accidentals = None
    windowed = policy.kind is PolicyKind.WINDOW
    if windowed and Mode(log.header.mode) is Mode.CONTINUOUS and len(log):
        try:
            accidentals = estimate_accidentals(log, accidental_width(policy.window), schedule, table)
        except AccidentalsError as e:
            warnings.append(f"accidentals not estimated: {e}")
        if accidentals is not None and options.subtract_accidentals:
            corrected = subtract_accidentals(table, accidentals)
            results.extend(evaluate_all(corrected, options, SUBTRACTED_SUFFIX))
            warnings.append("accidentals subtracted - reported violations may be artifacts")
    elif options.subtract_accidentals:
        warnings.append("accidental subtraction needs a continuous log under a window policy")

    return AnalysisResult(
        source=log.header.source,
        mode=Mode(log.header.mode).value,
        arity=log.header.arity,
        policy=policy.describe(),
        table=table,
        stats=coincidence_stats(table),
        results=tuple(results),
        test=test,
        test_skipped=test_skipped,
        accidentals=accidentals,
        warnings=tuple(warnings),
    )


def find_result(analysis, name) -> Optional[InequalityResult]:
    for result in analysis.results:
        if result.name == name:
            return result
    return None
