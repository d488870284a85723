"""Counter-based random streams.

Every random quantity is a pure function of a tuple of integer words
(master seed, trial, tag, event index, ...), so streams can be queried out
of order and replayed without state. The mixer is SplitMix64 folded over the
words; `hash_words_nb*` are numba twins that produce bit-identical output.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_INIT = 0x6A09E667F3BCC909

# stream tags
TAG_SOURCE = 1
TAG_MAC = 2
TAG_BROADCAST = 3
TAG_TDMA_UP = 4
TAG_TDMA_DOWN = 5
TAG_PAYLOAD = 6


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _fold(h: int, w: int) -> int:
    return _mix(((h ^ (w & MASK64)) + GOLDEN) & MASK64)


def hash_words(*words: int) -> int:
    """Mix any number of non-negative integers into one 64-bit word."""
    h = _INIT
    for w in words:
        h = _fold(h, w)
    return h


def to_unit(h: int) -> float:
    """Map a 64-bit word to a float in [0, 1)."""
    return (h >> 11) * 2.0**-53


def generator(*words: int) -> np.random.Generator:
    """A numpy Philox generator keyed by the given words."""
    return np.random.Generator(np.random.Philox(key=hash_words(*words)))


@njit(cache=True)
def _mix_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def fold_nb(h, w):
    return _mix_nb((h ^ np.uint64(w)) + np.uint64(GOLDEN))


@njit(cache=True)
def hash2_nb(a, b):
    return fold_nb(fold_nb(np.uint64(_INIT), a), b)


@njit(cache=True)
def hash3_nb(a, b, c):
    return fold_nb(hash2_nb(a, b), c)


@njit(cache=True)
def hash4_nb(a, b, c, d):
    return fold_nb(hash3_nb(a, b, c), d)


@njit(cache=True)
def hash5_nb(a, b, c, d, e):
    return fold_nb(hash4_nb(a, b, c, d), e)


@njit(cache=True)
def to_unit_nb(h):
    return np.float64(h >> np.uint64(11)) * 1.1102230246251565e-16
