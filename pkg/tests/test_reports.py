import pytest

from bell_lab import ReportError
from bell_lab.analysis import analyze_log
from bell_lab.coincidence import CoincidencePolicy, PolicyKind
from bell_lab.inequalities import FAIR_SAMPLING, NOT_ESTABLISHED, Bound, InequalityResult
from bell_lab.pair_source import LhvKind, LhvStrategy, QuantumKind, QuantumPairModel
from bell_lab.reports import (
    fmt,
    merge_reports,
    parse_key_values,
    read_report,
    render_key_values,
    render_text,
    slug,
    verdict,
    write_report,
)
from bell_lab.run_config import AnalysisOptions
from bell_lab.setting_source import SettingKind, SettingStrategy
from conftest import CHSH_A, CHSH_B

TRIAL = CoincidencePolicy(PolicyKind.TRIAL)


@pytest.fixture
def singlet_analysis(simulate):
    log = simulate(QuantumPairModel(QuantumKind.SINGLET), trials=8000)
    return analyze_log(log, TRIAL, AnalysisOptions(inequalities=("chsh", "rate_chsh")))


def test_slug_and_fmt():
    assert slug("no-enhancement CHSH conditional") == "no_enhancement_chsh_conditional"
    assert slug("CHSH (subtracted)") == "chsh_subtracted"
    assert fmt(None) == "none"
    assert fmt(True) == "true"
    assert fmt(float("nan")) == "nan"
    assert fmt(0.125) == "0.125"


@pytest.mark.parametrize(
    "result, expected",
    [
        (InequalityResult("CHSH", 2.5, Bound(2.0)), "VIOLATION of local realism"),
        (InequalityResult("CHSH", 1.5, Bound(2.0)), "no violation"),
        (InequalityResult("CHSH", 2.5, Bound(2.0, FAIR_SAMPLING)), "violation only under: assumes fair sampling"),
        (
            InequalityResult("CHSH", 3.5, Bound(3.0, NOT_ESTABLISHED, established=False)),
            f"exceeds a bound that is not established ({NOT_ESTABLISHED})",
        ),
        (InequalityResult.skip("CH", "missing singles"), "skipped: missing singles"),
    ],
)
def test_verdicts(result, expected):
    assert verdict(result) == expected


def test_key_values_parse_back(singlet_analysis):
    entries = parse_key_values(render_key_values(singlet_analysis, "singlet.csv"))
    assert entries["report.log"] == "singlet.csv"
    assert entries["report.arity"] == "2"
    assert entries["result.chsh.verdict"] == "VIOLATION of local realism"
    assert float(entries["result.chsh.value"]) > 2.6
    assert entries["result.rate_chsh.skipped"] == "missing REMOVED analyzer data"
    assert "result.rate_chsh.value" not in entries
    assert float(entries["test.k"]) > 10


def test_text_report(singlet_analysis):
    text = render_text(singlet_analysis, "singlet.csv")
    assert text.startswith("Bell test analysis of singlet.csv")
    assert "CHSH hypothesis test (null: local realism)" in text
    assert "  skipped: missing REMOVED analyzer data" in text
    assert "  also: > 2 [assumes fair sampling]" in text


def test_text_report_carries_warnings(simulate):
    memory = LhvStrategy(
        LhvKind.MEMORY_PR, CHSH_A, CHSH_B, assumed_pattern_a=(1, 1, 2, 2), assumed_pattern_b=(1, 2, 1, 2)
    )
    periodic = SettingStrategy(SettingKind.PERIODIC, pattern_a=(1, 1, 2, 2), pattern_b=(1, 2, 1, 2))
    analysis = analyze_log(simulate(memory, trials=400, settings=periodic), TRIAL)
    assert "  WARNING: settings predictable - memory loophole open" in render_text(analysis)


def test_parse_errors():
    with pytest.raises(ReportError, match="line 2"):
        parse_key_values("report.arity=2\nnot a pair\n")
    with pytest.raises(ReportError, match="no report.arity"):
        parse_key_values("report.log=x\n")


def test_write_and_read(tmp_path, singlet_analysis):
    text_path, kv_path = write_report(singlet_analysis, tmp_path / "report.txt", "singlet.csv")
    assert text_path.read_text() == render_text(singlet_analysis, "singlet.csv")
    assert kv_path == tmp_path / "report.kv"
    assert read_report(kv_path)["report.source"] == "singlet"


def test_merge(singlet_analysis, simulate):
    local = analyze_log(
        simulate(LhvStrategy(LhvKind.FAIR_COIN), trials=8000),
        TRIAL,
        AnalysisOptions(inequalities=("chsh",)),
    )
    merged = merge_reports(
        [
            ("quantum", parse_key_values(render_key_values(singlet_analysis))),
            ("local", parse_key_values(render_key_values(local))),
        ]
    )
    lines = merged.splitlines()
    assert lines[0] == "Comparison of reports"
    chsh = lines.index("CHSH")
    assert lines[chsh + 1].startswith("  quantum")
    assert lines[chsh + 1].endswith("VIOLATION of local realism")
    assert lines[chsh + 2].startswith("  local")
    assert lines[chsh + 2].endswith("no violation")
    rate = lines.index("rate CHSH")
    assert lines[rate + 1].endswith("skipped: missing REMOVED analyzer data")
    assert len(lines) == rate + 2


def test_merge_errors(singlet_analysis):
    entries = parse_key_values(render_key_values(singlet_analysis))
    wider = dict(entries, **{"report.arity": "3"})
    with pytest.raises(ReportError, match="incompatible arities"):
        merge_reports([("a", entries), ("b", wider)])
    with pytest.raises(ReportError):
        merge_reports([])
