import math
from pathlib import Path

import numpy as np
import pytest

from bell_lab import DomainError
from bell_lab.adversary_search import (
    StateRestriction,
    ch_terms,
    ch_with_efficiency,
    coincidence_curve,
    critical_eta,
    delay_strategies,
    det_strategies,
    efficiency_curve,
    local_det_strategies,
    max_conditional_chsh,
    max_windowed_chsh,
    mixture_values,
    optimize_eberhard,
    window_for_slots,
)
from bell_lab.coincidence import CoincidencePolicy, PolicyKind
from bell_lab.pair_source import TableKind, load_strategy_table

DELAY_TABLE = Path(__file__).resolve().parent.parent / "configs" / "tables" / "delay_adversary.csv"
STEP = 0.01


def test_strategy_enumeration():
    assert local_det_strategies().shape == (9, 2)
    assert len(det_strategies()) == 81
    assert len(delay_strategies(3)) == 36 * 36


@pytest.mark.parametrize("eta, expected", [(1.0, 2.0), (0.9, 4 / 0.9 - 2), (0.8, 3.0), (2 / 3, 4.0)])
def test_conditional_chsh_reaches_the_efficiency_bound(eta, expected):
    result = max_conditional_chsh(eta, eta, step=STEP)
    assert result.value == pytest.approx(expected, abs=0.01)
    assert result.bound == pytest.approx(expected)


def test_conditional_witness_reproduces_its_value():
    result = max_conditional_chsh(0.8, 0.8, step=STEP)
    assert result.witness.kind is TableKind.DETECT
    assert result.witness.weights.sum() == pytest.approx(1.0)
    values = mixture_values(result.witness)
    assert values.chsh == pytest.approx(result.value, abs=1e-6)
    assert values.eta >= 0.8 - 1e-6


def test_efficiency_curve_tracks_the_closed_form():
    frame, witnesses = efficiency_curve([1.0, 0.9, 0.8], step=STEP)
    assert len(witnesses) == 3
    np.testing.assert_allclose(frame["value"], frame["closed_form"], atol=0.01)


def test_windowed_chsh_at_full_coincidence():
    result = max_windowed_chsh(1.0, d=3, step=STEP)
    assert result.value == pytest.approx(2.0, abs=1e-6)


def test_windowed_chsh_reaches_four_at_three_quarters():
    result = max_windowed_chsh(0.75, d=3, w=1, slot_ticks=10, step=STEP)
    assert result.value == pytest.approx(4.0, abs=1e-6)
    assert result.level == pytest.approx(0.75, abs=1e-6)
    policy = CoincidencePolicy(PolicyKind.WINDOW, window=window_for_slots(1, 10))
    values = mixture_values(result.witness, policy)
    assert values.chsh == pytest.approx(4.0, abs=1e-6)
    assert values.gamma == pytest.approx(0.75, abs=1e-6)


def test_windowed_chsh_reaches_the_quantum_value_near_the_envelope():
    gamma = 0.8787
    result = max_windowed_chsh(gamma, d=3, step=STEP)
    assert result.value >= 2.78
    assert result.value <= 6 / gamma - 4 + 1e-9


def test_coincidence_curve_stays_under_the_envelope():
    frame, _ = coincidence_curve([1.0, 0.9, 0.8], d=3, step=STEP)
    assert (frame["value"] <= frame["envelope"] + 1e-6).all()
    assert frame["value"].iloc[0] == pytest.approx(2.0, abs=1e-6)


def test_search_arguments_are_checked():
    with pytest.raises(DomainError):
        max_conditional_chsh(0.0, 0.5)
    with pytest.raises(DomainError):
        max_windowed_chsh(0.8, d=9)
    with pytest.raises(DomainError):
        max_windowed_chsh(0.0, d=3)
    with pytest.raises(DomainError):
        optimize_eberhard(1.5, 1.0)


def test_window_for_slots():
    assert window_for_slots(1, 10) == 30
    assert window_for_slots(0, 5) == 5


def test_delay_adversary_under_a_symmetric_window():
    values = mixture_values(load_strategy_table(DELAY_TABLE), CoincidencePolicy(PolicyKind.WINDOW, window=30))
    assert values.chsh == pytest.approx(4.0)
    assert values.gamma == pytest.approx(0.75)
    assert values.ch == pytest.approx(0.25)


def test_delay_adversary_under_slots():
    values = mixture_values(load_strategy_table(DELAY_TABLE), CoincidencePolicy(PolicyKind.SLOTS, slot_len=1000))
    assert values.chsh == pytest.approx(2.0)
    assert values.ch == pytest.approx(0.0, abs=1e-12)


def test_delay_adversary_under_nested_windows():
    windows = {(1, 1): 30, (1, 2): 30, (2, 1): 30, (2, 2): 90}
    policy = CoincidencePolicy(PolicyKind.ASYMMETRIC, windows=windows, ch_compatible=True)
    values = mixture_values(load_strategy_table(DELAY_TABLE), policy)
    assert values.ch == pytest.approx(0.0, abs=1e-12)
    assert values.chsh == pytest.approx(3.5)


def test_ch_terms_of_the_maximal_state():
    s, single_a, single_b = ch_terms(math.pi / 4, 0.0, math.pi / 4, math.pi / 8, -math.pi / 8)
    assert s == pytest.approx((1 + math.sqrt(2)) / 2)
    assert single_a == pytest.approx(0.5)
    assert single_b == pytest.approx(0.5)
    value = ch_with_efficiency(0.9, 0.9, math.pi / 4, 0.0, math.pi / 4, math.pi / 8, -math.pi / 8)
    assert value == pytest.approx(0.81 * (1 + math.sqrt(2)) / 2 - 0.9)


def test_maximal_state_optimum():
    above = optimize_eberhard(0.9, 0.9, StateRestriction.MAXIMAL, starts=16)
    assert above.value == pytest.approx(0.81 * (1 + math.sqrt(2)) / 2 - 0.9, abs=1e-6)
    assert above.r == pytest.approx(math.pi / 4)
    below = optimize_eberhard(0.8, 0.8, StateRestriction.MAXIMAL, starts=16)
    assert below.value < 1e-9


@pytest.mark.slow
def test_critical_efficiencies():
    assert critical_eta(StateRestriction.MAXIMAL, starts=16) == pytest.approx(2 * math.sqrt(2) - 2, abs=1e-3)
    assert critical_eta(StateRestriction.OPTIMAL, starts=32) == pytest.approx(2 / 3, abs=0.02)
    assert critical_eta(StateRestriction.OPTIMAL, eta_a=1.0, starts=32) == pytest.approx(0.5, abs=0.03)


@pytest.mark.slow
def test_partially_entangled_state_beats_the_maximal_threshold():
    optimum = optimize_eberhard(0.75, 0.75, StateRestriction.OPTIMAL, starts=32)
    assert optimum.value > 0
    assert optimum.r < math.pi / 4
