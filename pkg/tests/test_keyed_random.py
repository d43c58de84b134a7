import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bell_lab.keyed_random import Stream, keyed_generator, keyed_uniforms, stream_key


def test_uniforms_stay_inside_open_interval():
    u = keyed_uniforms(5, Stream.LAMBDA, np.arange(100_000))
    assert u.min() > 0.0
    assert u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01


def test_draws_do_not_depend_on_the_range_requested():
    whole = keyed_uniforms(42, Stream.SETTING_A, np.arange(0, 1000))
    part = keyed_uniforms(42, Stream.SETTING_A, np.arange(357, 701))
    np.testing.assert_array_equal(whole[357:701], part)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=1_000_000), min_size=1, max_size=12))
def test_each_trial_draw_is_keyed_on_its_own_id(trial_ids):
    batch = keyed_uniforms(7, Stream.QUANTUM_A, np.array(trial_ids))
    single = [keyed_uniforms(7, Stream.QUANTUM_A, np.array([t]))[0] for t in trial_ids]
    np.testing.assert_array_equal(batch, single)


def test_streams_and_seeds_are_independent():
    ids = np.arange(1000)
    a = keyed_uniforms(1, Stream.SETTING_A, ids)
    b = keyed_uniforms(1, Stream.SETTING_B, ids)
    c = keyed_uniforms(2, Stream.SETTING_A, ids)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1


def test_negative_trial_ids_are_rejected():
    with pytest.raises(ValueError):
        keyed_uniforms(1, Stream.LAMBDA, np.array([3, -1]))


def test_empty_request():
    assert keyed_uniforms(1, Stream.LAMBDA, np.array([], dtype=np.int64)).shape == (0,)


def test_stream_key_packs_seed_and_stream():
    assert stream_key(5, 3) == (3 << 64) | 5
    # 64-bit seeds wrap
    assert stream_key(-1, 0) == (1 << 64) - 1


def test_sequential_generator_is_reproducible():
    first = keyed_generator(9, Stream.DARK_A).random(10)
    second = keyed_generator(9, Stream.DARK_A).random(10)
    np.testing.assert_array_equal(first, second)
