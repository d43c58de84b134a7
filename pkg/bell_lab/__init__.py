"""
Bell-test laboratory: event-level simulation and analysis of Bell experiments.

This package holds the shared pieces used by the scripts in lab_scripts/:
event logs, setting sources, pair sources, detector channels, coincidence
identification, inequality evaluators, statistics and strategy optimizers.
"""


class BellLabError(Exception):
    """Base class for every error raised by the laboratory."""


class ConfigError(BellLabError):
    """Invalid run configuration; the message starts with the field path."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class LogParseError(BellLabError):
    """Malformed event-log text."""

    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class LogValidationError(BellLabError):
    """Event log breaks a type invariant."""

    def __init__(self, index, message):
        super().__init__(f"event {index}: {message}")
        self.index = index


class LogWriteError(BellLabError):
    """Sink failed while writing an event log."""

    def __init__(self, position, message):
        super().__init__(f"write failed at byte {position}: {message}")
        self.position = position


class SettingReplayError(BellLabError):
    """Replayed setting file has no entry for a trial."""

    def __init__(self, trial_id, message):
        super().__init__(f"trial {trial_id}: {message}")
        self.trial_id = trial_id


class AccidentalsError(BellLabError):
    pass


class TableError(BellLabError):
    pass


class DomainError(BellLabError):
    pass


class AdversaryError(BellLabError):
    pass


class StrategyError(BellLabError):
    pass


class ReportError(BellLabError):
    """Reports that cannot be read or merged."""


def warn(message):
    """Print a warning line in the project's standard format."""
    print(f"Warning: {message}")
