"""Reproducible counter-based random streams.

The generator is SplitMix64 (Vigna's public-domain reference): a 64-bit
Weyl counter advanced by the odd constant 0x9E3779B97F4A7C15 whose state is
passed through a two-round avalanche mix. Because each output is a pure
function of (initial state, draw index), the scheme is counter-based:
replicate streams never share mutable state and any draw can be produced
out of order. Ports in other languages reproduce the byte-exact sequence
from the reference vectors in tests/test_rng.py (generated with the
reference C implementation), e.g. state 0 yields
0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F, ...

Stream derivation (documented contract):

    state0(seed, index) = mix64((mix64(seed) + index) mod 2**64)

so a master ``seed`` keys 2**64 disjoint-by-construction streams, one per
replicate ``index``. Uniform doubles use the top 53 bits with a half-ulp
offset,

    u = ((x >> 11) + 0.5) * 2**-53  in (0, 1) exclusive,

which keeps inverse-CDF transforms (normal quantiles included) finite.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_U53_SCALE = 2.0 ** -53


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int (mod 2**64)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MUL1) & _MASK
    z = ((z ^ (z >> 27)) * _MUL2) & _MASK
    return z ^ (z >> 31)


def derive_state(seed: int, index: int) -> int:
    """Initial stream state for replicate ``index`` under master ``seed``."""
    return mix64((mix64(seed) + index) & _MASK)


class Stream:
    """Scalar SplitMix64 stream. One instance per sampling consumer.

    Never share an instance between concurrent callers; derive one stream
    per task instead.
    """

    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = state & _MASK

    @classmethod
    def derive(cls, seed: int, index: int) -> "Stream":
        return cls(derive_state(seed, index))

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & _MASK
        return mix64(self.state)

    def uniform(self) -> float:
        """Next uniform double in (0, 1)."""
        return ((self.next_u64() >> 11) + 0.5) * _U53_SCALE


# --- vectorized form over many streams --------------------------------------
#
# numpy uint64 arithmetic wraps mod 2**64, matching the scalar path bit for
# bit. Constants are materialized as uint64 scalars once; mixing Python ints
# into uint64 array expressions would upcast to float64.

_GOLDEN_U = np.uint64(GOLDEN)
_MUL1_U = np.uint64(_MUL1)
_MUL2_U = np.uint64(_MUL2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _MUL1_U
    z = (z ^ (z >> _S27)) * _MUL2_U
    return z ^ (z >> _S31)


def derive_states(seed: int, indices: np.ndarray) -> np.ndarray:
    """Vector of initial states for the given replicate indices."""
    base = np.uint64(mix64(seed))
    return _mix64_vec(base + indices.astype(np.uint64))


def next_uniforms(states: np.ndarray) -> np.ndarray:
    """Advance every stream in place and return one uniform per stream."""
    states += _GOLDEN_U
    bits = _mix64_vec(states)
    return ((bits >> _S11).astype(np.float64) + 0.5) * _U53_SCALE
