import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exforge.rng import Xoshiro256, make_rng

MASK = (1 << 64) - 1


def ref_splitmix(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return x, z ^ (z >> 31)


def ref_stream(seed, n):
    """Straight transcription of the xoshiro256** reference in Python ints."""
    x = seed & MASK
    s = []
    for _ in range(4):
        x, z = ref_splitmix(x)
        s.append(z)

    def rotl(v, k):
        return ((v << k) | (v >> (64 - k))) & MASK

    out = []
    for _ in range(n):
        out.append(rotl((s[1] * 5) & MASK, 7) * 9 & MASK)
        t = (s[1] << 17) & MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
    return out


@pytest.mark.parametrize("seed", [0, 1, 42, 2**63 + 5])
def test_stream_matches_reference(seed):
    got = Xoshiro256(seed).next_u64(64).tolist()
    assert got == ref_stream(seed, 64)


def test_streams_continue_across_calls():
    a = Xoshiro256(9)
    first = a.next_u64(10).tolist() + a.next_u64(7).tolist()
    assert first == ref_stream(9, 17)


def test_uniforms_in_unit_interval_and_reproducible():
    u = Xoshiro256(3).random(10_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert np.array_equal(u, Xoshiro256(3).random(10_000))
    assert abs(u.mean() - 0.5) < 0.01


def test_normal_moments():
    z = Xoshiro256(5).normal(size=200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01


def test_normal_odd_size_and_scalar():
    assert Xoshiro256(1).normal(size=(3, 3)).shape == (3, 3)
    assert isinstance(Xoshiro256(1).normal(), float)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 200), st.integers(0, 2**32))
def test_permutation_is_a_permutation(n, seed):
    p = Xoshiro256(seed).permutation(n)
    assert sorted(p.tolist()) == list(range(n))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 50), st.integers(0, 2**32))
def test_integers_in_range(high, seed):
    x = Xoshiro256(seed).integers(high, size=100)
    assert x.min() >= 0 and x.max() < high


def test_spawn_is_deterministic_and_distinct():
    root = Xoshiro256(11)
    a, b = root.spawn(1).random(5), root.spawn(2).random(5)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, Xoshiro256(11).spawn(1).random(5))


def test_make_rng_passthrough():
    r = Xoshiro256(1)
    assert make_rng(r) is r
    assert make_rng(None).seed == 0
