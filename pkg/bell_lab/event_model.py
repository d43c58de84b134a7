"""
Event and trial types, plus reading and writing of event logs.

An event log is a block of `#key=value` header lines, one column line and
one CSV row per detection:

    #mode=slotted
    #arity=2
    ...
    site,trial,time_ns,setting,channel
    A,0,500,1,+1

The REMOVED analyzer is written `inf`; the trial column is empty in
continuous mode. Events are kept column-wise in a pandas DataFrame; the
DetectionEvent dataclass is the row view.
"""

import io
import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Dict, Iterable, Iterator, Optional

import numpy as np
import pandas as pd

from bell_lab import LogParseError, LogValidationError, LogWriteError

# Setting index of an absent analyzer; real settings are 1..m
REMOVED = 0
# Outcome symbol for a missing detection
NODETECT = 0
# Trial column value in continuous mode
NO_TRIAL = -1

EVENT_COLUMNS = ["site", "trial", "time_ns", "setting", "channel"]
COLUMN_LINE = ",".join(EVENT_COLUMNS)
EVENT_DTYPES = {
    "site": np.int8,
    "trial": np.int64,
    "time_ns": np.int64,
    "setting": np.int32,
    "channel": np.int8,
}
WRITE_CHUNK_ROWS = 200_000

HEADER_PATTERN = re.compile(r"^#([A-Za-z_][\w.]*)=(.*)$")
ERROR_LINE_PATTERN = re.compile(r"line (\d+)")
INTEGER_PATTERN = r"-?\d+"


class Site(IntEnum):
    A = 0
    B = 1

    @property
    def label(self):
        return self.name


class Channel(IntEnum):
    PLUS = 1
    MINUS = -1


class Mode(str, Enum):
    CONTINUOUS = "continuous"
    SLOTTED = "slotted"


@dataclass(frozen=True)
class DetectionEvent:
    site: Site
    trial_id: Optional[int]
    time: int
    setting: int
    channel: Channel


@dataclass(frozen=True)
class TrialRecord:
    """One joint trial; NODETECT outcomes carry no time."""

    trial_id: int
    setting_a: int
    setting_b: int
    outcome_a: int
    outcome_b: int
    time_a: Optional[int] = None
    time_b: Optional[int] = None

    def __post_init__(self):
        for outcome, time, side in (
            (self.outcome_a, self.time_a, "a"),
            (self.outcome_b, self.time_b, "b"),
        ):
            if outcome not in (1, -1, NODETECT):
                raise ValueError(f"outcome_{side} must be +1, -1 or NODETECT")
            if (outcome == NODETECT) != (time is None):
                raise ValueError(f"outcome_{side} is NODETECT iff time_{side} is absent")


@dataclass(frozen=True)
class LogHeader:
    mode: Mode
    arity: int
    tick_ns: int = 1
    seed: Optional[int] = None
    source: str = ""
    extras: Dict[str, str] = field(default_factory=dict)

    def lines(self):
        """Header lines in their fixed order, extras sorted by key."""
        seed = "" if self.seed is None else str(self.seed)
        lines = [
            f"#mode={Mode(self.mode).value}",
            f"#arity={self.arity}",
            f"#tick_ns={self.tick_ns}",
            f"#seed={seed}",
            f"#source={self.source}",
        ]
        lines.extend(f"#{key}={self.extras[key]}" for key in sorted(self.extras))
        return lines

    def with_extras(self, updates):
        extras = dict(self.extras)
        extras.update({key: str(value) for key, value in updates.items()})
        return LogHeader(self.mode, self.arity, self.tick_ns, self.seed, self.source, extras)


@dataclass(frozen=True)
class EventStream:
    """Column arrays of one site's events, in log order."""

    site: Site
    time: np.ndarray
    setting: np.ndarray
    channel: np.ndarray
    trial: np.ndarray

    def __len__(self):
        return len(self.time)


@dataclass(frozen=True, eq=False)
class EventLog:
    header: LogHeader
    events: pd.DataFrame

    def __post_init__(self):
        object.__setattr__(self, "events", normalize_events(self.events))

    def __eq__(self, other):
        if not isinstance(other, EventLog):
            return NotImplemented
        return self.header == other.header and self.events.equals(other.events)

    def __len__(self):
        return len(self.events)

    @classmethod
    def from_events(cls, header, events: Iterable[DetectionEvent]):
        rows = [
            (
                int(event.site),
                NO_TRIAL if event.trial_id is None else event.trial_id,
                event.time,
                event.setting,
                int(event.channel),
            )
            for event in events
        ]
        return cls(header, pd.DataFrame(rows, columns=EVENT_COLUMNS))

    def iter_events(self) -> Iterator[DetectionEvent]:
        for site, trial, time, setting, channel in self.events.itertuples(index=False):
            yield DetectionEvent(
                Site(site),
                None if trial == NO_TRIAL else int(trial),
                int(time),
                int(setting),
                Channel(channel),
            )

    def stream(self, site):
        """Events of one site as column arrays."""
        frame = self.events[self.events["site"] == int(site)]
        return EventStream(
            Site(site),
            frame["time_ns"].to_numpy(),
            frame["setting"].to_numpy(),
            frame["channel"].to_numpy(),
            frame["trial"].to_numpy(),
        )

    def with_events(self, events):
        return EventLog(self.header, events)


def normalize_events(frame):
    """Column order, dtypes and a fresh index for an event table."""
    frame = frame.reindex(columns=EVENT_COLUMNS)
    if frame.isna().any().any():
        raise ValueError("event table has missing values")
    frame = frame.astype(EVENT_DTYPES)
    return frame.reset_index(drop=True)


def empty_events():
    return normalize_events(pd.DataFrame(columns=EVENT_COLUMNS))


def sort_events(frame):
    """Time order, site A before B at equal times, otherwise stable."""
    return frame.sort_values(["time_ns", "site"], kind="mergesort").reset_index(drop=True)


def validate_log(log):
    """Check every type invariant; raise LogValidationError at the first breach."""
    header = log.header
    if header.arity < 1:
        raise LogValidationError(0, f"arity must be positive, got {header.arity}")
    events = log.events
    if len(events) == 0:
        return log

    checks = [
        (~events["site"].isin([int(Site.A), int(Site.B)]), "site must be A or B"),
        (~events["channel"].isin([1, -1]), "channel must be +1 or -1"),
        (events["time_ns"] < 0, "time must be nonnegative"),
        (
            (events["setting"] != REMOVED)
            & ((events["setting"] < 1) | (events["setting"] > header.arity)),
            f"setting outside 1..{header.arity}",
        ),
        (events["trial"] < NO_TRIAL, "trial id must be nonnegative"),
    ]
    if Mode(header.mode) is Mode.SLOTTED:
        checks.append((events["trial"] == NO_TRIAL, "slotted events need a trial id"))
        checks.append(
            (events.duplicated(["site", "trial"]), "second event for the same site and trial")
        )
    for mask, message in checks:
        bad = np.flatnonzero(mask.to_numpy())
        if len(bad):
            raise LogValidationError(int(bad[0]), message)

    # Per-site time order
    for site in (Site.A, Site.B):
        positions = np.flatnonzero(events["site"].to_numpy() == int(site))
        times = events["time_ns"].to_numpy()[positions]
        drops = np.flatnonzero(np.diff(times) < 0)
        if len(drops):
            raise LogValidationError(
                int(positions[drops[0] + 1]), f"site {site.label} time decreases"
            )
    return log


def _render_rows(frame):
    site = np.where(frame["site"].to_numpy() == int(Site.A), "A", "B")
    trial = frame["trial"].to_numpy()
    trial_text = np.where(trial == NO_TRIAL, "", trial.astype(str))
    setting = frame["setting"].to_numpy()
    setting_text = np.where(setting == REMOVED, "inf", setting.astype(str))
    channel_text = np.where(frame["channel"].to_numpy() > 0, "+1", "-1")
    rows = pd.DataFrame(
        {
            "site": site,
            "trial": trial_text,
            "time_ns": frame["time_ns"].to_numpy().astype(str),
            "setting": setting_text,
            "channel": channel_text,
        }
    )
    return rows.to_csv(index=False, header=False, lineterminator="\n")


def encode_log(log, destination):
    """Write a log to a binary sink; returns the number of bytes written."""
    validate_log(log)
    position = 0
    try:
        head = "\n".join(log.header.lines() + [COLUMN_LINE]) + "\n"
        data = head.encode("ascii")
        destination.write(data)
        position += len(data)
        for start in range(0, len(log.events), WRITE_CHUNK_ROWS):
            chunk = log.events.iloc[start : start + WRITE_CHUNK_ROWS]
            data = _render_rows(chunk).encode("ascii")
            destination.write(data)
            position += len(data)
    except OSError as e:
        raise LogWriteError(position, str(e)) from e
    return position


def write_log(log, path):
    """Encode a log into a file."""
    with open(path, "wb") as f:
        return encode_log(log, f)


def _parse_header(text):
    """Split header lines off; returns (LogHeader, body text, body line offset)."""
    values = {}
    position = 0
    line_number = 0
    while True:
        end = text.find("\n", position)
        line = text[position:] if end == -1 else text[position:end]
        line_number += 1
        if not line.startswith("#"):
            break
        match = HEADER_PATTERN.match(line.rstrip("\r"))
        if not match:
            raise LogParseError(line_number, f"malformed header line {line!r}")
        values[match.group(1)] = match.group(2)
        if end == -1:
            raise LogParseError(line_number + 1, "missing column line")
        position = end + 1

    if line.rstrip("\r") != COLUMN_LINE:
        raise LogParseError(line_number, f"expected column line {COLUMN_LINE!r}")
    body = "" if end == -1 else text[end + 1 :]

    try:
        mode = Mode(values.pop("mode"))
        arity = int(values.pop("arity"))
        tick_ns = int(values.pop("tick_ns", "1"))
        seed_text = values.pop("seed", "")
        seed = int(seed_text) if seed_text else None
    except KeyError as e:
        raise LogParseError(1, f"header is missing {e.args[0]}") from e
    except ValueError as e:
        raise LogParseError(1, f"bad header value: {e}") from e
    source = values.pop("source", "")
    return LogHeader(mode, arity, tick_ns, seed, source, values), body, line_number


def _first_bad(mask):
    bad = np.flatnonzero(np.asarray(mask))
    return int(bad[0]) if len(bad) else None


def decode_log(source):
    """Read a log from a binary stream (or a path) and validate it."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            raw = f.read()
    else:
        raw = source.read()
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as e:
        line_number = raw[: e.start].count(b"\n") + 1
        raise LogParseError(line_number, "non-ASCII byte") from e

    header, body, column_line = _parse_header(text)

    try:
        raw_frame = pd.read_csv(
            io.StringIO(body),
            header=None,
            names=EVENT_COLUMNS,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
        )
    except pd.errors.EmptyDataError:
        raw_frame = pd.DataFrame(columns=EVENT_COLUMNS, dtype=str)
    except pd.errors.ParserError as e:
        match = ERROR_LINE_PATTERN.search(str(e))
        line_number = column_line + int(match.group(1)) if match else column_line + 1
        raise LogParseError(line_number, "wrong number of fields") from e

    raw_frame = raw_frame.fillna("\x00")
    columns = {}
    formats = {
        "site": r"[AB]",
        "trial": r"\d*",
        "time_ns": INTEGER_PATTERN,
        "setting": r"inf|" + INTEGER_PATTERN,
        "channel": r"[+-]?1",
    }
    for name, pattern in formats.items():
        ok = raw_frame[name].str.fullmatch(pattern).to_numpy(dtype=bool)
        row = _first_bad(~ok)
        if row is not None:
            raise LogParseError(
                column_line + 1 + row, f"bad {name} field {raw_frame[name].iloc[row]!r}"
            )
        columns[name] = raw_frame[name]

    setting_text = columns["setting"]
    removed = (setting_text == "inf").to_numpy()
    setting = pd.to_numeric(setting_text.where(~removed, "0")).to_numpy(dtype=np.int64)
    row = _first_bad(~removed & ((setting < 1) | (setting > header.arity)))
    if row is not None:
        raise LogValidationError(row, f"setting outside 1..{header.arity}")

    trial_text = columns["trial"]
    frame = pd.DataFrame(
        {
            "site": np.where(columns["site"].to_numpy() == "A", int(Site.A), int(Site.B)),
            "trial": pd.to_numeric(trial_text.where(trial_text != "", str(NO_TRIAL))),
            "time_ns": pd.to_numeric(columns["time_ns"]),
            "setting": np.where(removed, REMOVED, setting),
            "channel": np.where(columns["channel"].to_numpy() == "-1", -1, 1),
        }
    )
    return validate_log(EventLog(header, frame))


def read_log(path):
    return decode_log(Path(path))
