import numpy as np
import pytest

from bell_lab import ConfigError, DomainError
from bell_lab.channel_model import (
    SUBTRACTED_FLAG,
    ChannelConfig,
    RemovedBehavior,
    apply_channel,
    apply_channel_batch,
    estimate_accidentals,
    inject_dark_counts,
    subtract_accidentals,
)
from bell_lab.coincidence import CoincidencePolicy, PolicyKind, pair_events
from bell_lab.correlation_table import CorrelationTable, tabulate
from bell_lab.event_model import NO_TRIAL, REMOVED, Mode, Site
from bell_lab.pair_source import LocalResponse, QuantumKind, QuantumPairModel, ResponseBatch
from bell_lab.schedule import schedule_from_header

N = 100_000


def test_efficiency_drops_detections_without_touching_signs():
    outcome = np.where(np.arange(N) % 3 == 0, -1, 1)
    batch = ResponseBatch.ideal(outcome)
    cfg = ChannelConfig(eta_a=0.7)
    result = apply_channel_batch(batch, np.ones(N, dtype=int), cfg, Site.A, 5, np.arange(N))
    assert result.detected.mean() == pytest.approx(0.7, abs=0.01)
    np.testing.assert_array_equal(result.outcome, outcome)


def test_minus_channel_efficiency():
    batch = ResponseBatch.ideal(np.full(N, -1))
    cfg = ChannelConfig(eta_b=1.0, eta_b_minus=0.5)
    result = apply_channel_batch(batch, np.ones(N, dtype=int), cfg, Site.B, 5, np.arange(N))
    assert result.detected.mean() == pytest.approx(0.5, abs=0.01)


def test_removed_analyzer_behaviors():
    batch = ResponseBatch.ideal(np.full(N, -1))
    settings = np.full(N, REMOVED)
    counted = apply_channel_batch(batch, settings, ChannelConfig(eta_a=0.6), Site.A, 2, np.arange(N))
    lossless = apply_channel_batch(
        batch, settings, ChannelConfig(eta_a=0.6, removed_behavior=RemovedBehavior.LOSSLESS), Site.A, 2, np.arange(N)
    )
    assert (counted.outcome == 1).all()
    assert counted.detected.mean() == pytest.approx(0.6, abs=0.01)
    assert lossless.detected.all()


def test_jitter_keeps_delays_nonnegative():
    cfg = ChannelConfig(jitter_sigma=2.5)
    batch = ResponseBatch.ideal(np.ones(N))
    result = apply_channel_batch(batch, np.ones(N, dtype=int), cfg, Site.A, 1, np.arange(N))
    assert result.delay.min() >= 0
    assert result.delay.max() <= 2 * cfg.latency
    assert result.delay.mean() == pytest.approx(cfg.latency, abs=0.05)
    assert result.delay.std() == pytest.approx(2.5, abs=0.1)


def test_single_response_channel_is_keyed():
    cfg = ChannelConfig(eta_a=0.5, jitter_sigma=1.0)
    first = apply_channel(LocalResponse(-1), cfg, Site.A, 3, 77)
    assert first == apply_channel(LocalResponse(-1), cfg, Site.A, 3, 77)
    assert first.outcome == -1


def test_channel_config_rejects_bad_values():
    with pytest.raises(ConfigError) as error:
        ChannelConfig(eta_a=1.2)
    assert error.value.field == "channel.eta_a"
    with pytest.raises(ConfigError):
        ChannelConfig(dark_rate=-1.0)
    with pytest.raises(ConfigError):
        ChannelConfig(removed_behavior="sometimes")


def test_dark_counts_need_a_continuous_log(simulate):
    log = simulate(QuantumPairModel(QuantumKind.SINGLET), trials=100)
    with pytest.raises(DomainError):
        inject_dark_counts(log, ChannelConfig(dark_rate=1e6), 1)


def test_dark_count_number_follows_rate(simulate):
    trials = 20_000
    log = simulate(
        QuantumPairModel(QuantumKind.SINGLET),
        trials=trials,
        mode=Mode.CONTINUOUS,
        channel=ChannelConfig(eta_a=0.0, eta_b=0.0, dark_rate=1e7),
    )
    expected = 1e7 * trials * 1000 / 1e9
    for site in (Site.A, Site.B):
        assert len(log.stream(site)) == pytest.approx(expected, rel=0.02)
    assert int(log.header.extras["dark.events_a"]) == len(log.stream(Site.A))


def test_accidental_estimate_matches_dark_coincidences(simulate):
    log = simulate(
        QuantumPairModel(QuantumKind.SINGLET),
        trials=20_000,
        mode=Mode.CONTINUOUS,
        channel=ChannelConfig(eta_a=0.0, eta_b=0.0, dark_rate=1e7),
    )
    schedule = schedule_from_header(log.header)
    pairing = pair_events(log, CoincidencePolicy(PolicyKind.WINDOW, window=10), schedule)
    estimate = estimate_accidentals(log, 11, schedule)
    assert estimate.expected.sum() == pytest.approx(len(pairing), rel=0.12)
    assert estimate.rate(1, 1) > 0


def test_uncorrelated_singles_estimate_matches_accidental_pairs(simulate):
    log = simulate(
        QuantumPairModel(QuantumKind.SINGLET),
        trials=20_000,
        mode=Mode.CONTINUOUS,
        period=2000,
        channel=ChannelConfig(dark_rate=4e6),
    )
    schedule = schedule_from_header(log.header)
    pairing = pair_events(log, CoincidencePolicy(PolicyKind.WINDOW, window=4), schedule)
    table = tabulate(log, pairing, schedule)
    trial_a = log.stream(Site.A).trial[pairing.idx_a]
    trial_b = log.stream(Site.B).trial[pairing.idx_b]
    accidental = int(((trial_a == NO_TRIAL) | (trial_a != trial_b)).sum())

    estimate = estimate_accidentals(log, 5, schedule, table)
    assert estimate.expected.sum() == pytest.approx(accidental, rel=0.06)
    # every singles count includes the signal, so the plain product runs high
    plain = estimate_accidentals(log, 5, schedule)
    assert plain.expected.sum() > 1.15 * accidental
    assert (estimate.singles_a <= plain.singles_a + 1e-9).all()


def test_accidentals_need_continuous_logs(simulate):
    log = simulate(QuantumPairModel(QuantumKind.SINGLET), trials=100)
    with pytest.raises(DomainError):
        estimate_accidentals(log, 10)


def test_subtraction_flags_and_clips():
    table = CorrelationTable.from_counts({(1, 1): [[10, 2], [2, 10]], (2, 2): [[1, 0], [0, 1]]})
    expected = np.zeros_like(table.joint)
    expected[1, 1] = 1.0
    expected[2, 2, 0, 0] = 3.0
    corrected = subtract_accidentals(table, expected)
    assert corrected.accidentals_subtracted
    assert SUBTRACTED_FLAG in corrected.flags
    assert corrected.joint[1, 1, 0, 0] == 9
    assert corrected.joint[2, 2, 0, 0] == 0
    assert corrected.clipped_cells == 1
    # the flag survives a second pass
    again = subtract_accidentals(corrected, np.zeros_like(table.joint))
    assert again.flags.count(SUBTRACTED_FLAG) == 1


def test_subtracted_table_from_a_window_pairing(simulate):
    log = simulate(
        QuantumPairModel(QuantumKind.SINGLET),
        trials=5000,
        mode=Mode.CONTINUOUS,
        channel=ChannelConfig(dark_rate=2e6),
    )
    schedule = schedule_from_header(log.header)
    pairing = pair_events(log, CoincidencePolicy(PolicyKind.WINDOW, window=10), schedule)
    table = tabulate(log, pairing, schedule)
    corrected = subtract_accidentals(table, estimate_accidentals(log, 11, schedule))
    assert corrected.joint.sum() < table.joint.sum()
    assert corrected.joint.min() >= 0
