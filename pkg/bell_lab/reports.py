"""
Analysis reports: a plain-text form for people, a line-oriented
`key=value` form for machines, and the merge of several key=value reports
into one comparison table.
"""

import math
import re
import sqlite3
from pathlib import Path

from bell_lab import ReportError
from bell_lab.inequalities import LOCAL_REALISM

KV_SUFFIX = ".kv"
KV_LINE_PATTERN = re.compile(r"^([A-Za-z0-9_.]+)=(.*)$")
SLUG_PATTERN = re.compile(r"[^a-z0-9]+")
NUMBER_FORMAT = "{:.10g}"


def slug(name):
    return SLUG_PATTERN.sub("_", name.lower()).strip("_")


def fmt(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        if isinstance(value, float) and math.isnan(value):
            return "nan"
        return NUMBER_FORMAT.format(value)
    return str(value)


def verdict(result):
    """One-line reading of a result; a violation always names the assumption it rests on."""
    if result.skipped:
        return f"skipped: {result.skipped}"
    if not result.violated:
        return "no violation"
    if result.bound.label == LOCAL_REALISM and result.bound.established:
        return "VIOLATION of local realism"
    if not result.bound.established:
        return f"exceeds a bound that is not established ({result.bound.label})"
    return f"violation only under: {result.bound.label}"


def _bound_note(bound):
    return bound.source if bound.label == LOCAL_REALISM else bound.label


def _result_pairs(result):
    key = f"result.{slug(result.name)}"
    pairs = [(f"{key}.name", result.name)]
    if result.skipped:
        pairs.append((f"{key}.skipped", result.skipped))
        return pairs
    pairs.extend(
        [
            (f"{key}.value", fmt(result.value)),
            (f"{key}.bound", fmt(result.bound.value)),
            (f"{key}.bound_label", result.bound.label),
            (f"{key}.bound_established", fmt(result.bound.established)),
            (f"{key}.bound_source", result.bound.source),
            (f"{key}.violated", fmt(result.violated)),
            (f"{key}.margin", fmt(result.margin)),
            (f"{key}.verdict", verdict(result)),
            (f"{key}.provenance", result.provenance),
        ]
    )
    if result.lower_bound is not None:
        pairs.append((f"{key}.lower_bound", fmt(result.lower_bound)))
    for n, bound in enumerate(result.alternatives, start=1):
        pairs.append((f"{key}.alternative.{n}", f"{fmt(bound.value)} | {bound.label} | {bound.source}"))
    if result.assumptions:
        pairs.append((f"{key}.assumptions", "; ".join(result.assumptions)))
    if result.flags:
        pairs.append((f"{key}.flags", "; ".join(result.flags)))
    for name, value in result.details.items():
        pairs.append((f"{key}.detail.{slug(name)}", fmt(value)))
    return pairs


def _test_pairs(analysis):
    if analysis.test is None:
        return [("test.skipped", analysis.test_skipped or "not requested")]
    test = analysis.test
    pairs = [
        ("test.beta", fmt(test.beta)),
        ("test.s_beta", fmt(test.s_beta)),
        ("test.k", fmt(test.k)),
        ("test.p_normal", fmt(test.p_normal)),
        ("test.p_normal_bound", fmt(test.p_normal_bound)),
        ("test.p_hoeffding", fmt(test.p_hoeffding)),
    ]
    if test.equal_n_s is not None:
        pairs.append(("test.equal_n_s", fmt(test.equal_n_s)))
    for (i, j), n in sorted(test.n_cells.items()):
        pairs.append((f"test.n.{i}{j}", fmt(n)))
        pairs.append((f"test.s.{i}{j}", fmt(test.s_cells[(i, j)])))
    if test.coarse is not None:
        pairs.extend(
            [
                ("test.coarse.beta", fmt(test.coarse.beta)),
                ("test.coarse.s_beta", fmt(test.coarse.s_beta)),
                ("test.coarse.p", fmt(test.coarse.p)),
                ("test.coarse.subsamples", fmt(test.coarse.subsamples)),
            ]
        )
        if test.coarse.flags:
            pairs.append(("test.coarse.flags", "; ".join(test.coarse.flags)))
    pairs.append(("test.flags", "; ".join(test.flags)))
    return pairs


def report_pairs(analysis, log_name=""):
    """Ordered (key, value) pairs of an analysis."""
    gamma = analysis.stats.gamma_min
    pairs = [
        ("report.log", log_name),
        ("report.source", analysis.source),
        ("report.mode", analysis.mode),
        ("report.arity", fmt(analysis.arity)),
        ("report.policy", analysis.policy),
        ("report.subtracted", fmt(any(r.name.endswith("(subtracted)") for r in analysis.results))),
        ("report.eta", fmt(analysis.stats.eta)),
        ("report.gamma", "unavailable" if gamma is None else fmt(gamma)),
        ("report.flags", "; ".join(analysis.flags)),
        ("report.warnings", "; ".join(analysis.warnings)),
    ]
    if analysis.stats.undefined_cells:
        pairs.append(("report.undefined_cells", " ".join(f"{i}{j}" for i, j in analysis.stats.undefined_cells)))
    if analysis.accidentals is not None:
        ratios = analysis.accidentals.signal_to_accidental(analysis.table)
        size = analysis.arity + 1
        for i in range(size):
            for j in range(size):
                if analysis.accidentals.exposure[i, j] > 0:
                    label = f"{'inf' if i == 0 else i}.{'inf' if j == 0 else j}"
                    pairs.append((f"accidentals.ratio.{label}", fmt(float(ratios[i, j]))))
                    pairs.append((f"accidentals.rate.{label}", fmt(analysis.accidentals.rate(i, j))))
    pairs.extend(_test_pairs(analysis))
    for result in analysis.results:
        pairs.extend(_result_pairs(result))
    return pairs


def render_key_values(analysis, log_name=""):
    return "".join(f"{key}={value}\n" for key, value in report_pairs(analysis, log_name))


def render_text(analysis, log_name=""):
    lines = [
        f"Bell test analysis of {log_name or 'event log'}",
        f"  source: {analysis.source}   mode: {analysis.mode}   settings per side: {analysis.arity}",
        f"  coincidence policy: {analysis.policy}",
        f"  efficiency eta (min conditional detection probability): {fmt(analysis.stats.eta)}",
    ]
    gamma = analysis.stats.gamma_min
    lines.append(f"  coincidence probability gamma: {'unavailable' if gamma is None else fmt(gamma)}")
    for flag in analysis.flags:
        lines.append(f"  flag: {flag}")
    for message in analysis.warnings:
        lines.append(f"  WARNING: {message}")

    lines.append("")
    if analysis.test is not None:
        test = analysis.test
        lines.append("CHSH hypothesis test (null: local realism)")
        lines.append(f"  beta* = {fmt(test.beta)} +- {fmt(test.s_beta)}   k = {fmt(test.k)}")
        lines.append(f"  p normal = {fmt(test.p_normal)} (closed-form bound {fmt(test.p_normal_bound)})")
        lines.append(f"  p Hoeffding = {fmt(test.p_hoeffding)}")
        if test.coarse is not None:
            lines.append(
                f"  coarse-grained: beta* = {fmt(test.coarse.beta)} +- {fmt(test.coarse.s_beta)}, "
                f"p = {fmt(test.coarse.p)} over {test.coarse.subsamples} subsamples"
            )
        for flag in test.flags:
            lines.append(f"  flag: {flag}")
    else:
        lines.append(f"CHSH hypothesis test skipped: {analysis.test_skipped}")

    for result in analysis.results:
        lines.append("")
        lines.append(f"{result.name}")
        if result.skipped:
            lines.append(f"  skipped: {result.skipped}")
            continue
        lines.append(f"  value {fmt(result.value)}   bound {fmt(result.bound.value)} [{_bound_note(result.bound)}]")
        lines.append(f"  {verdict(result)}")
        for bound in result.alternatives:
            side = ">" if result.value > bound.value else "<="
            lines.append(f"  also: {side} {fmt(bound.value)} [{_bound_note(bound)}]")
        for flag in result.flags:
            lines.append(f"  flag: {flag}")
        lines.append(f"  from: {result.provenance}")
    return "\n".join(lines) + "\n"


def write_report(analysis, path, log_name=""):
    """Write the text report to `path` and the key=value form next to it."""
    path = Path(path)
    with open(path, "w") as f:
        f.write(render_text(analysis, log_name))
    kv_path = path.with_suffix(KV_SUFFIX)
    with open(kv_path, "w") as f:
        f.write(render_key_values(analysis, log_name))
    return path, kv_path


def parse_key_values(text, name="report"):
    entries = {}
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        match = KV_LINE_PATTERN.match(line)
        if not match:
            raise ReportError(f"{name} line {number}: expected key=value")
        entries[match.group(1)] = match.group(2)
    if "report.arity" not in entries:
        raise ReportError(f"{name}: not a report (no report.arity)")
    return entries


def read_report(path):
    path = Path(path)
    with open(path, "r") as f:
        return parse_key_values(f.read(), path.name)


def create_database():
    """In-memory comparison database."""
    conn = sqlite3.connect(":memory:")
    cursor = conn.cursor()

    cursor.execute("DROP TABLE IF EXISTS reports")
    cursor.execute(
        """
    CREATE TABLE IF NOT EXISTS reports (
        id INTEGER PRIMARY KEY,
        name TEXT NOT NULL,
        arity INTEGER NOT NULL,
        policy TEXT,
        eta TEXT,
        gamma TEXT,
        warnings TEXT
    )
    """
    )
    cursor.execute("DROP TABLE IF EXISTS results")
    cursor.execute(
        """
    CREATE TABLE IF NOT EXISTS results (
        report_id INTEGER NOT NULL,
        position INTEGER NOT NULL,
        inequality TEXT NOT NULL,
        value TEXT,
        bound TEXT,
        bound_label TEXT,
        verdict TEXT,
        FOREIGN KEY (report_id) REFERENCES reports (id)
    )
    """
    )
    return conn


def _load(cursor, report_id, name, entries):
    cursor.execute(
        "INSERT INTO reports VALUES (?, ?, ?, ?, ?, ?, ?)",
        (
            report_id,
            name,
            int(entries["report.arity"]),
            entries.get("report.policy", ""),
            entries.get("report.eta", ""),
            entries.get("report.gamma", ""),
            entries.get("report.warnings", ""),
        ),
    )
    position = 0
    for key, value in entries.items():
        if not (key.startswith("result.") and key.endswith(".name")):
            continue
        prefix = key[: -len(".name")]
        skipped = entries.get(f"{prefix}.skipped")
        cursor.execute(
            "INSERT INTO results VALUES (?, ?, ?, ?, ?, ?, ?)",
            (
                report_id,
                position,
                value,
                entries.get(f"{prefix}.value", ""),
                entries.get(f"{prefix}.bound", ""),
                entries.get(f"{prefix}.bound_label", ""),
                f"skipped: {skipped}" if skipped else entries.get(f"{prefix}.verdict", ""),
            ),
        )
        position += 1


def merge_reports(named_entries):
    """Comparison table of several parsed reports, given as (name, entries) pairs."""
    if not named_entries:
        raise ReportError("no reports to merge")
    arities = {int(entries["report.arity"]) for _, entries in named_entries}
    if len(arities) > 1:
        raise ReportError(f"incompatible arities: {sorted(arities)}")

    conn = create_database()
    cursor = conn.cursor()
    for report_id, (name, entries) in enumerate(named_entries, start=1):
        _load(cursor, report_id, name, entries)
    conn.commit()

    lines = ["Comparison of reports"]
    for name, policy, eta, gamma, warnings in cursor.execute(
        "SELECT name, policy, eta, gamma, warnings FROM reports ORDER BY id"
    ).fetchall():
        lines.append(f"  {name}: policy {policy}, eta {eta}, gamma {gamma}")
        if warnings:
            lines.append(f"    WARNING: {warnings}")

    inequalities = [
        row[0]
        for row in cursor.execute(
            "SELECT inequality FROM results GROUP BY inequality ORDER BY MIN(report_id), MIN(position)"
        ).fetchall()
    ]
    width = max(len(name) for name, _ in named_entries)
    for inequality in inequalities:
        lines.append("")
        lines.append(inequality)
        rows = cursor.execute(
            """
            SELECT reports.name, results.value, results.bound, results.bound_label, results.verdict
            FROM results JOIN reports ON reports.id = results.report_id
            WHERE results.inequality = ?
            ORDER BY reports.id
            """,
            (inequality,),
        ).fetchall()
        for name, value, bound, label, reading in rows:
            if reading.startswith("skipped"):
                lines.append(f"  {name:<{width}}  {reading}")
            else:
                lines.append(f"  {name:<{width}}  {value:>14} vs {bound:>10} [{label}]  {reading}")
    conn.close()
    return "\n".join(lines) + "\n"
