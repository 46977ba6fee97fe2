from hypothesis import given, strategies as st

from priceshap.rng import SplitMix64, Xoshiro256, shuffled


def test_splitmix64_reference_values():
    assert SplitMix64(0).next() == 0xE220A8397B1DCDAF
    sm = SplitMix64(1234567)
    assert [sm.next() for _ in range(3)] == [6457827717110365317, 3203168211198807973, 9817491932198370423]


def test_xoshiro256starstar_reference_state():
    gen = Xoshiro256(0)
    gen.s = [1, 2, 3, 4]
    assert [gen.next() for _ in range(4)] == [11520, 0, 1509978240, 1215971899390074240]


@given(st.integers(0, 2**64 - 1), st.integers(1, 1000))
def test_below_stays_in_range(seed, bound):
    gen = Xoshiro256(seed)
    assert all(0 <= gen.below(bound) < bound for _ in range(20))


@given(st.lists(st.integers(), max_size=60), st.integers(0, 2**64 - 1))
def test_shuffle_is_a_permutation(items, seed):
    out = shuffled(items, seed)
    assert sorted(out) == sorted(items)
    assert shuffled(items, seed) == out


def test_shuffle_uniform_enough():
    # each of 3! orders should appear about 1/6 of the time over 6000 seeds
    counts = {}
    for seed in range(6000):
        key = tuple(shuffled([0, 1, 2], seed))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    assert all(850 < c < 1150 for c in counts.values())
