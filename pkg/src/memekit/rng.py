"""Deterministic random primitives for replayable shuffles and draws.

Everything seed-dependent in this package (split shuffles, k-means init,
random label backoff) runs on the generator defined here, never on a
platform RNG, so a recorded seed replays bit-identically anywhere. The
algorithms are pinned:

* seeding: splitmix64, four consecutive outputs fill the state
* stream: xoshiro256** (Blackman/Vigna reference update)
* bounded ints: rejection sampling on the top range, then modulo
* floats: top 53 bits of a draw, scaled by 2**-53 (uniform in [0, 1))
* shuffle: Fisher-Yates, descending index, one bounded draw per step
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int):
    """One splitmix64 step: returns (output, next_state)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** stream seeded via splitmix64 from a 64-bit seed."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            out, state = _splitmix64(state)
            s.append(out)
        if not any(s):
            s[0] = 1  # the all-zero state is a fixed point of the update
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def next_below(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def next_float(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53


def fisher_yates(items: list, rng: Xoshiro256StarStar) -> None:
    """Shuffle items in place."""
    for i in range(len(items) - 1, 0, -1):
        j = rng.next_below(i + 1)
        items[i], items[j] = items[j], items[i]


def fnv1a64(text: str) -> int:
    """FNV-1a over the UTF-8 bytes; used to derive per-key substreams."""
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def derive_stream(seed: int, key: str) -> Xoshiro256StarStar:
    """Independent generator for (seed, key), e.g. one stream per item id."""
    return Xoshiro256StarStar((seed & _MASK64) ^ fnv1a64(key))
