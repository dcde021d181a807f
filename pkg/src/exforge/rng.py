"""Reproducible random streams.

Every random draw in the package (datasets, initial weights, latent noise,
probe directions, sign flips) comes from :class:`Xoshiro256`, a
xoshiro256** generator seeded through splitmix64.  Both algorithms are
fully specified by their reference C code, so a stream is identical on
every platform and can be re-derived by another implementation:

* seeding: the four 64-bit state words are the first four outputs of
  splitmix64 started at ``seed`` (mod 2**64);
* uniforms: ``(next() >> 11) * 2**-53``, in ``[0, 1)``;
* normals: Box-Muller on consecutive uniform pairs ``(u1, u2)`` giving
  ``sqrt(-2 log(1 - u1)) * cos(2 pi u2)`` then the matching ``sin`` term.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> tuple[int, int]:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


@njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def _fill(state, out):
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    for i in range(out.shape[0]):
        out[i] = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


class Xoshiro256:
    """xoshiro256** stream with a small numpy-flavoured sampling API."""

    def __init__(self, seed: int = 0):
        x = int(seed) & _MASK
        words = []
        for _ in range(4):
            x, z = _splitmix64(x)
            words.append(z)
        self.seed = int(seed)
        self._state = np.array(words, dtype=np.uint64)

    def next_u64(self, n: int) -> np.ndarray:
        out = np.empty(int(n), dtype=np.uint64)
        if n:
            _fill(self._state, out)
        return out

    def random(self, size=None) -> np.ndarray | float:
        n = int(np.prod(size)) if size is not None else 1
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return low + (high - low) * self.random(size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        n = int(np.prod(size)) if size is not None else 1
        pairs = (n + 1) // 2
        u = self.random(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).ravel()[:n]
        z = loc + scale * z
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, high: int, size=None):
        """Uniform integers in ``[0, high)`` (multiply-shift on 53-bit uniforms)."""
        u = self.random(size if size is not None else 1)
        out = np.minimum((np.asarray(u) * high).astype(np.int64), high - 1)
        return int(out.ravel()[0]) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        # Fisher-Yates driven by one uniform per position
        idx = np.arange(n)
        if n < 2:
            return idx
        u = self.random(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def spawn(self, key: int) -> "Xoshiro256":
        """Independent child stream derived from this stream's seed and ``key``."""
        _, mixed = _splitmix64((self.seed * 0x9E3779B97F4A7C15 + int(key)) & _MASK)
        return Xoshiro256(mixed)


def make_rng(seed) -> Xoshiro256:
    if isinstance(seed, Xoshiro256):
        return seed
    return Xoshiro256(0 if seed is None else int(seed))
