"""Deterministic pseudo-random number generation.

Every stochastic step in this package draws from a :class:`SeedStream`, a
xoshiro256++ generator whose 256-bit state is filled by running the
splitmix64 expander four times on a 64-bit seed.  The algorithms are the
public-domain ones by Blackman, Vigna and Steele (see
https://prng.di.unimi.it/); they were chosen because their definitions are
portable across languages, so identical seeds give bit-identical streams
everywhere.

Conventions used throughout the package:

* ``uniform01`` maps the top 53 bits of a raw draw to [0, 1).
* ``normal`` is Box-Muller on two uniforms (the sine partner is cached, so
  a pair of normals consumes exactly two uniforms).
* bounded integers are ``floor(uniform01() * n)``.
"""

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_SPLITMIX_MUL1 = 0xBF58476D1CE4E5B9
_SPLITMIX_MUL2 = 0x94D049BB133111EB


def _splitmix64_next(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; return ``(new_state, output)``."""
    state = (state + _SPLITMIX_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * _SPLITMIX_MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _SPLITMIX_MUL2) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class SeedStream:
    """xoshiro256++ stream; the full output sequence is a pure function of the seed.

    The state is never everywhere-zero: splitmix64 output of any seed cannot
    produce four zero words.  Instances are single-owner: they may be handed
    from one task to another but must not be shared concurrently.
    """

    __slots__ = ("seed", "_s", "_normal_cache")

    def __init__(self, seed: int):
        seed = int(seed) & MASK64
        self.seed = seed
        state = seed
        s = []
        for _ in range(4):
            state, out = _splitmix64_next(state)
            s.append(out)
        self._s = s
        self._normal_cache: float | None = None

    def __repr__(self) -> str:  # pragma: no cover
        return f"SeedStream(seed={self.seed})"

    def next_uint64(self) -> int:
        """Next raw 64-bit output (xoshiro256++ scrambler)."""
        s = self._s
        result = (_rotl((s[0] + s[3]) & MASK64, 23) + s[0]) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform01(self) -> float:
        """Uniform draw in [0, 1) with 53-bit resolution."""
        return (self.next_uint64() >> 11) * 2.0**-53

    def normal(self) -> float:
        """Standard normal via Box-Muller; caches the sine partner."""
        if self._normal_cache is not None:
            z = self._normal_cache
            self._normal_cache = None
            return z
        u1 = self.uniform01()
        u2 = self.uniform01()
        # remap u1 from [0,1) to (0,1] so the log argument is never zero
        radius = math.sqrt(-2.0 * math.log(1.0 - u1))
        angle = 2.0 * math.pi * u2
        self._normal_cache = radius * math.sin(angle)
        return radius * math.cos(angle)

    def normals(self, count: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(count)])

    def uniforms(self, count: int) -> np.ndarray:
        return np.array([self.uniform01() for _ in range(count)])

    def integer_below(self, n: int) -> int:
        """Integer in {0, ..., n-1} as floor(uniform01 * n)."""
        if n <= 0:
            raise ValueError("integer_below requires n >= 1")
        return int(self.uniform01() * n)

    def shuffle(self, items) -> list:
        """Fisher-Yates permutation of ``items`` (input left untouched)."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.integer_below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def gamma(self, shape: float, scale: float = 1.0) -> float:
        """Gamma draw, Marsaglia-Tsang squeeze method.

        Rejection means the number of raw draws consumed is data dependent,
        which is fine: the sequence is still a pure function of the seed.
        """
        if shape <= 0.0:
            raise ValueError("gamma shape must be positive")
        if shape < 1.0:
            # boost trick: G(a) = G(a+1) * U^(1/a)
            u = self.uniform01()
            while u == 0.0:
                u = self.uniform01()
            return self.gamma(shape + 1.0, scale) * u ** (1.0 / shape)
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = 1.0 + c * x
            if v <= 0.0:
                continue
            v = v * v * v
            u = self.uniform01()
            if u == 0.0:
                continue
            if u < 1.0 - 0.0331 * x * x * x * x:
                return d * v * scale
            if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
                return d * v * scale
