"""Seeded random numbers with a bit-exact, documented algorithm.

Generator: SplitMix64. The ``i``-th output (0-based) of a stream with seed
``s`` is ``mix(s + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64)`` where::

    mix(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   mod 2**64
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB   mod 2**64
        return z ^ (z >> 31)

Because outputs are a pure function of the counter, bulk draws are computed
vectorised and give the same values as one-at-a-time draws.

Uniforms: ``u = (x >> 11) * 2**-53`` in [0, 1).

Normals: Box-Muller on two consecutive uniforms ``u_a, u_b``:
``sqrt(-2 ln(1 - u_a)) * cos(2 pi u_b)``. Only the cosine branch is used, so
every normal consumes exactly two 64-bit outputs.

Sub-streams: ``substream(seed, k1, k2, ...)`` folds each key in with
``h = mix(h + (k + 1) * GOLDEN)``, giving an independent seed per key tuple.
"""
import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_TWO_POW_M53 = 2.0 ** -53


def mix64(z):
    """SplitMix64 finaliser on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def substream(seed, *keys):
    h = seed & MASK64
    for k in keys:
        h = mix64(h + ((k + 1) * GOLDEN))
    return h


class Rng:
    """Counter-based SplitMix64 stream."""

    def __init__(self, seed):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = seed & MASK64
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def u64(self, size):
        idx = np.arange(self.counter + 1, self.counter + 1 + size, dtype=np.uint64)
        self.counter += size
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(GOLDEN)
            return _mix64_array(z)

    def next_u64(self):
        self.counter += 1
        return mix64(self.seed + self.counter * GOLDEN)

    def uniform(self, size):
        return (self.u64(size) >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53

    def normal(self, size):
        u = self.uniform(2 * size)
        ua, ub = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log(1.0 - ua)) * np.cos(2.0 * np.pi * ub)

    def gaussian(self):
        return float(self.normal(1)[0])

    def below(self, m):
        """Uniform integer in ``[0, m)`` by rejection (no modulo bias)."""
        if m <= 0:
            raise ValueError("m must be positive")
        limit = (1 << 64) - ((1 << 64) % m)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % m

    def sample(self, population, count):
        """``count`` distinct items of ``population`` by partial Fisher-Yates."""
        items = list(population)
        if count > len(items):
            raise ValueError("sample larger than population")
        for i in range(count):
            j = i + self.below(len(items) - i)
            items[i], items[j] = items[j], items[i]
        return items[:count]
