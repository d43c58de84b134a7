"""
Counter-based random draws keyed on (seed, stream, trial_id).

Every per-trial random quantity in the laboratory comes from here. Draw
number t of a stream is the t-th 64-bit output of a Philox generator whose
key packs the seed and the stream id, so a trial's value never depends on
how many trials were generated before it or on how the trial range was
split between workers.
"""

from enum import IntEnum

import numpy as np

__all__ = [
    "Stream",
    "stream_key",
    "keyed_uniforms",
    "keyed_generator",
]

SEED_MASK = (1 << 64) - 1
# Philox4x64 emits four 64-bit words per counter step
WORDS_PER_BLOCK = 4


class Stream(IntEnum):
    """Stream ids; one per independent random quantity."""

    SETTING_A = 1
    SETTING_B = 2
    LAMBDA = 3
    QUANTUM_A = 4
    QUANTUM_B = 5
    PATH = 6
    DETECT_A = 7
    DETECT_B = 8
    JITTER_A = 9
    JITTER_B = 10
    DARK_A = 11
    DARK_B = 12
    OPTIMIZER = 13


def stream_key(seed, stream):
    """Pack a 64-bit seed and a stream id into a 128-bit Philox key."""
    return (int(stream) << 64) | (int(seed) & SEED_MASK)


def keyed_uniforms(seed, stream, trial_ids):
    """Uniform draws on the open interval (0, 1), one per trial id.

    trial_ids may be any array of nonnegative integers; the result has the
    same shape and entry k depends only on (seed, stream, trial_ids[k]).
    """
    trial_ids = np.asarray(trial_ids, dtype=np.int64)
    if trial_ids.size == 0:
        return np.empty(trial_ids.shape, dtype=np.float64)
    if trial_ids.min() < 0:
        raise ValueError("trial ids must be nonnegative")

    lo = int(trial_ids.min())
    hi = int(trial_ids.max())
    first_block = lo // WORDS_PER_BLOCK
    offset = lo - first_block * WORDS_PER_BLOCK

    bit_generator = np.random.Philox(
        key=stream_key(seed, stream), counter=first_block
    )
    raw = bit_generator.random_raw(hi - lo + 1 + offset)[offset:]
    words = raw[trial_ids - lo]

    # 53 high bits, shifted by half a unit to stay off 0
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def keyed_generator(seed, stream):
    """A sequential numpy Generator for processes that are not per trial."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, stream)))
