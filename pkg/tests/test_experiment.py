import math

import pytest

from bell_lab import ConfigError
from bell_lab.analysis import PREDICTABLE_WARNING, analyze_log, find_result
from bell_lab.channel_model import ChannelConfig
from bell_lab.coincidence import CoincidencePolicy, PolicyKind
from bell_lab.event_model import REMOVED, Mode, Site
from bell_lab.experiment import ExperimentConfig, run_experiment
from bell_lab.pair_source import LhvKind, LhvStrategy, QuantumKind, QuantumPairModel
from bell_lab.run_config import AnalysisOptions
from bell_lab.setting_source import SettingKind, SettingStrategy
from conftest import CHSH_A, CHSH_B, QUANTUM_CHSH

TRIAL = CoincidencePolicy(PolicyKind.TRIAL)
PERIODIC = SettingStrategy(SettingKind.PERIODIC, pattern_a=(1, 1, 2, 2), pattern_b=(1, 2, 1, 2))
MEMORY = LhvStrategy(
    LhvKind.MEMORY_PR, CHSH_A, CHSH_B, assumed_pattern_a=(1, 1, 2, 2), assumed_pattern_b=(1, 2, 1, 2)
)


def chsh_of(log, policy=TRIAL, **options):
    analysis = analyze_log(log, policy, AnalysisOptions(**options))
    return find_result(analysis, "CHSH"), analysis


def test_log_does_not_depend_on_chunks_or_threads(simulate):
    source = QuantumPairModel(QuantumKind.SINGLET)
    channel = ChannelConfig(eta_a=0.8, eta_b=0.7, jitter_sigma=1.5)
    whole = simulate(source, trials=3000, channel=channel)
    split = simulate(source, trials=3000, channel=channel, chunk_trials=700, threads=3)
    assert whole == split


def test_seed_changes_the_log(simulate):
    source = QuantumPairModel(QuantumKind.SINGLET)
    assert simulate(source, trials=500, seed=1) != simulate(source, trials=500, seed=2)


def test_header_records_the_run(simulate):
    log = simulate(QuantumPairModel(QuantumKind.SINGLET), trials=100, seed=5)
    extras = log.header.extras
    assert log.header.seed == 5
    assert log.header.source == "singlet"
    assert extras["run.trials"] == "100"
    assert extras["settings.kind"] == "iid_uniform"
    assert [float(x) for x in extras["source.angles_b"].split()] == list(CHSH_B)


def test_slotted_events_sit_at_emission_time(simulate):
    log = simulate(QuantumPairModel(QuantumKind.SINGLET), trials=50)
    stream = log.stream(Site.A)
    assert (stream.time == stream.trial * 1000 + 500).all()


def test_singlet_violates_chsh(simulate):
    result, analysis = chsh_of(simulate(QuantumPairModel(QuantumKind.SINGLET), trials=100_000))
    assert result.value == pytest.approx(QUANTUM_CHSH, abs=0.03)
    assert result.violated
    assert analysis.test.k > 20


def test_sign_model_stays_local(simulate):
    result, _ = chsh_of(simulate(LhvStrategy(LhvKind.SIGN_MODEL, CHSH_A, CHSH_B), trials=100_000))
    assert result.value == pytest.approx(2.0, abs=0.03)


def test_memory_attack_on_periodic_settings(simulate):
    log = simulate(MEMORY, trials=4000, settings=PERIODIC)
    result, analysis = chsh_of(log)
    assert result.value == pytest.approx(4.0)
    assert PREDICTABLE_WARNING in analysis.warnings
    assert log.header.extras["memory.fallback_trials"] == "0"


def test_memory_attack_collapses_on_random_settings(simulate):
    log = simulate(MEMORY, trials=8000)
    result, analysis = chsh_of(log)
    assert result.value == pytest.approx(2.0, abs=0.1)
    assert int(log.header.extras["memory.fallback_trials"]) > 7000
    assert PREDICTABLE_WARNING not in analysis.warnings


def test_lossy_singlet_conditional_chsh(simulate):
    channel = ChannelConfig(eta_a=0.8, eta_b=0.8)
    result, analysis = chsh_of(simulate(QuantumPairModel(QuantumKind.SINGLET), trials=100_000, channel=channel))
    assert result.value == pytest.approx(QUANTUM_CHSH, abs=0.04)
    assert result.bound.value == pytest.approx(3.0, abs=0.05)
    assert not result.violated
    assert analysis.stats.gamma_min == pytest.approx(0.64, abs=0.02)


def test_franson_coincidences_select_equal_arms(simulate):
    source = QuantumPairModel(QuantumKind.FRANSON, long_path_delay=5)
    log = simulate(source, trials=100_000, mode=Mode.CONTINUOUS)
    policy = CoincidencePolicy(PolicyKind.WINDOW, window=4)
    result, analysis = chsh_of(log, policy, event_ready_eta=0.5)
    # phases add: E = cos(a + b) on equal arms
    expected = abs(math.cos(0 + math.pi / 4) + math.cos(0 - math.pi / 4))
    expected += abs(math.cos(math.pi / 2 + math.pi / 4) - math.cos(math.pi / 2 - math.pi / 4))
    assert result.value == pytest.approx(expected, abs=0.04)
    assert analysis.table.joint.sum() == pytest.approx(50_000, rel=0.02)
    assert result.bound.value == pytest.approx(6.0)
    assert not result.violated


def test_removed_analyzers_pass_photons(simulate):
    settings = SettingStrategy(SettingKind.IID_UNIFORM, choices_a=(1, 2, REMOVED), choices_b=(1, 2, REMOVED))
    log = simulate(QuantumPairModel(QuantumKind.SINGLET), trials=3000, settings=settings)
    stream = log.stream(Site.A)
    assert (stream.channel[stream.setting == REMOVED] == 1).all()


def test_experiment_config_checks():
    source = QuantumPairModel(QuantumKind.SINGLET)
    settings = SettingStrategy(SettingKind.IID_UNIFORM)
    base = dict(source=source, settings=settings, seed=1, angles_a=CHSH_A, angles_b=CHSH_B)
    with pytest.raises(ConfigError) as error:
        ExperimentConfig(trials=0, **base)
    assert error.value.field == "run.trials"
    with pytest.raises(ConfigError):
        ExperimentConfig(trials=10, channel=ChannelConfig(dark_rate=1e5), **base)
    with pytest.raises(ConfigError):
        ExperimentConfig(trials=10, channel=ChannelConfig(jitter_sigma=100.0), **base)
    with pytest.raises(ConfigError) as error:
        ExperimentConfig(source=source, settings=settings, trials=10, seed=1, angles_a=(0.0,), angles_b=CHSH_B)
    assert error.value.field == "source.angles_a"


def test_franson_rejects_removed_analyzers():
    settings = SettingStrategy(SettingKind.IID_UNIFORM, choices_a=(1, REMOVED))
    with pytest.raises(ConfigError):
        ExperimentConfig(
            source=QuantumPairModel(QuantumKind.FRANSON),
            settings=settings,
            trials=10,
            seed=1,
            angles_a=CHSH_A,
            angles_b=CHSH_B,
        )


def test_run_experiment_end_to_end_config():
    cfg = ExperimentConfig(
        source=LhvStrategy(LhvKind.FAIR_COIN),
        settings=SettingStrategy(SettingKind.IID_UNIFORM),
        trials=1000,
        seed=3,
    )
    log = run_experiment(cfg)
    assert len(log.stream(Site.A)) == 1000
    assert "source.angles_a" not in log.header.extras
