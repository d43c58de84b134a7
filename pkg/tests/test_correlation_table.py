import math

import numpy as np
import pytest

from bell_lab import TableError
from bell_lab.channel_model import ChannelConfig
from bell_lab.coincidence import CoincidencePolicy, PolicyKind, pair_events
from bell_lab.correlation_table import (
    EXCLUDE,
    CorrelationTable,
    count_table,
    outcome_index,
    parse_nodetect_value,
    tabulate,
)
from bell_lab.event_model import NODETECT, Mode, Site, TrialRecord
from bell_lab.pair_source import QuantumKind, QuantumPairModel
from bell_lab.schedule import schedule_from_header
from conftest import CHSH_A, CHSH_B


def lossy_cell():
    trials = np.zeros((3, 3))
    trials[1, 1] = 100
    table = CorrelationTable.from_counts({(1, 1): [[30, 10], [10, 30]]}, trials=trials)
    table.a_only[1, 1] = [5, 3]
    table.b_only[1, 1] = [2, 4]
    return table


def test_outcome_index():
    assert outcome_index([1, -1, 1]).tolist() == [0, 1, 0]


def test_nodetect_values():
    assert parse_nodetect_value("exclude") == EXCLUDE
    assert parse_nodetect_value(None) == EXCLUDE
    assert parse_nodetect_value("-1") == -1
    assert parse_nodetect_value(0) == 0
    with pytest.raises(ValueError):
        parse_nodetect_value("2")


def test_coincidence_only_correlation():
    table = lossy_cell()
    assert table.correlation(1, 1) == pytest.approx(0.5)
    assert table.coincidences(1, 1) == 80


def test_missing_outcomes_scored_as_zero_or_minus_one():
    table = lossy_cell()
    assert table.neither(1, 1) == 6
    assert table.correlation(1, 1, nodetect_value=0) == pytest.approx(0.40)
    assert table.correlation(1, 1, nodetect_value=-1) == pytest.approx(0.46)
    n, _, second = table.moments(1, 1, nodetect_value=-1)
    assert (n, second) == (100, 100)


def test_missing_cells_raise():
    table = lossy_cell()
    with pytest.raises(TableError):
        table.correlation(2, 2)
    with pytest.raises(TableError):
        table.require_cell(1, 2)
    no_trials = CorrelationTable.from_counts({(1, 1): [[1, 0], [0, 1]]})
    with pytest.raises(TableError):
        no_trials.neither(1, 1)
    with pytest.raises(TableError):
        no_trials.probability(1, 1)


def test_probabilities_use_trials():
    table = lossy_cell()
    assert table.probability(1, 1, 1, 1) == pytest.approx(0.30)
    assert table.probability(1, 1, -1, 1) == pytest.approx(0.10)
    assert table.single_probability(Site.A, 1, 1) == pytest.approx(0.45)
    assert table.single_probability(Site.B, 1, 1, outcome=-1) == pytest.approx(0.44)
    assert table.singles(Site.B, 1, 1) == 86


def test_rates_use_exposure():
    exposure = np.zeros((3, 3))
    exposure[1, 2] = 1e6
    table = CorrelationTable.from_counts({(1, 2): [[5, 0], [0, 5]]}, exposure=exposure)
    assert table.probability(1, 2) == pytest.approx(5e-6)


def test_angle_pair():
    table = CorrelationTable.from_counts({(1, 1): [[1, 0], [0, 1]]}, angles_a=CHSH_A, angles_b=CHSH_B)
    assert table.angle_pair(2, 1) == (CHSH_A[1], CHSH_B[0])
    assert lossy_cell().angle_pair(1, 1) is None


def test_flags_are_not_repeated():
    table = lossy_cell().with_flag("x").with_flag("x")
    assert table.flags == ("x",)


def test_ideal_singlet_table(simulate):
    log = simulate(QuantumPairModel(QuantumKind.SINGLET), trials=40_000)
    schedule = schedule_from_header(log.header)
    table = tabulate(log, pair_events(log, CoincidencePolicy(PolicyKind.TRIAL), schedule), schedule)
    assert table.joint.sum() == 40_000
    assert table.trials.sum() == 40_000
    assert table.trial_structured and table.ch_bound_established
    for i in (1, 2):
        for j in (1, 2):
            expected = -math.cos(CHSH_A[i - 1] - CHSH_B[j - 1])
            assert table.correlation(i, j) == pytest.approx(expected, abs=0.03)


def test_lone_detections_are_kept_per_setting_pair(simulate):
    log = simulate(QuantumPairModel(QuantumKind.SINGLET), trials=5000, channel=ChannelConfig(eta_a=0.7, eta_b=0.7))
    schedule = schedule_from_header(log.header)
    table = tabulate(log, pair_events(log, CoincidencePolicy(PolicyKind.TRIAL), schedule), schedule)
    assert table.joint.sum() + table.a_only.sum() == len(log.stream(Site.A))
    assert table.joint.sum() + table.b_only.sum() == len(log.stream(Site.B))
    assert table.a_unknown.sum() == 0
    assert table.flags == ()
    assert sum(table.neither(i, j) for i in (1, 2) for j in (1, 2)) == pytest.approx(5000 * 0.09, rel=0.2)


def test_lone_detections_without_a_schedule(simulate):
    log = simulate(QuantumPairModel(QuantumKind.SINGLET), trials=2000, channel=ChannelConfig(eta_a=0.7, eta_b=0.7))
    table = tabulate(log, pair_events(log, CoincidencePolicy(PolicyKind.TRIAL)))
    assert table.trials is None
    assert table.a_only.sum() == 0
    assert table.a_unknown.sum() > 0
    assert "remote setting of lone detections unknown" in table.flags


def test_window_table_uses_exposure(simulate):
    log = simulate(QuantumPairModel(QuantumKind.SINGLET), trials=4000, mode=Mode.CONTINUOUS)
    schedule = schedule_from_header(log.header)
    table = tabulate(log, pair_events(log, CoincidencePolicy(PolicyKind.WINDOW, window=10), schedule), schedule)
    assert table.trials is None
    assert not table.ch_bound_established
    assert table.exposure[1:, 1:].sum() == 4000 * 1000
    assert table.policy == "window tau=10"


def test_count_table_from_records():
    records = [
        TrialRecord(0, 1, 1, 1, -1, 5, 5),
        TrialRecord(1, 1, 2, 1, NODETECT, 5, None),
        TrialRecord(2, 2, 2, NODETECT, -1, None, 5),
        TrialRecord(3, 2, 1, NODETECT, NODETECT),
    ]
    trials = np.zeros((3, 3))
    trials[1:, 1:] = 1
    table = count_table(records, 2, trials=trials)
    assert table.joint[1, 1, 0, 1] == 1
    assert table.a_only[1, 2, 0] == 1
    assert table.b_only[2, 2, 1] == 1
    assert table.neither(2, 1) == 1
