"""Deterministic random number generation with a compact serializable state.

The generator is PCG64 restricted to its 64-bit draw paths (doubles and
normals), which keeps the bit generator's cached-uint32 slot permanently
empty.  The full state is then exactly four 64-bit words: the high/low
halves of the 128-bit LCG state and of the stream increment.  Those four
words are what checkpoints store.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(*parts) -> int:
    """Stable 63-bit seed derived from arbitrary (repr-able) parts.

    Python's builtin hash() is salted per process, so a cryptographic
    digest is used instead to keep derived streams stable across runs.
    """
    h = hashlib.sha256("\x1f".join(repr(p) for p in parts).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") >> 1


class Rng:
    """Seeded random stream whose state round-trips as four u64 words."""

    def __init__(self, seed: int):
        self._bitgen = np.random.PCG64(seed)
        self._gen = np.random.Generator(self._bitgen)

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def random(self, shape=()) -> np.ndarray:
        return self._gen.random(size=shape, dtype=np.float64)

    def permutation(self, n: int) -> np.ndarray:
        # argsort of doubles instead of Generator.permutation: the latter
        # draws bounded uint32s, which would populate the cached-half slot
        # and break the four-word state contract.
        return np.argsort(self.random(n), kind="stable")

    def spawn(self, *tags) -> "Rng":
        """Independent stream derived from tags only (not from this state)."""
        return Rng(derive_seed(*tags))

    def state_words(self) -> tuple[int, int, int, int]:
        st = self._bitgen.state
        if st.get("has_uint32", 0):
            raise AssertionError("32-bit draw path used; state is not 4 words")
        s = st["state"]["state"]
        inc = st["state"]["inc"]
        return (s >> 64) & _MASK64, s & _MASK64, (inc >> 64) & _MASK64, inc & _MASK64

    @classmethod
    def from_state_words(cls, words) -> "Rng":
        hi_s, lo_s, hi_i, lo_i = (int(w) & _MASK64 for w in words)
        rng = cls(0)
        rng._bitgen.state = {
            "bit_generator": "PCG64",
            "state": {"state": (hi_s << 64) | lo_s, "inc": (hi_i << 64) | lo_i},
            "has_uint32": 0,
            "uinteger": 0,
        }
        return rng
