import numpy as np
import pytest
from hypothesis import given, strategies as st

from wickwave.noise import MEMBER_BLOCK, NoiseStream, ordered_map


class TestNoiseStream:
    def test_reproducible(self):
        a = NoiseStream(7).substream("x", 3).normal((5,), "step", 2)
        b = NoiseStream(7).substream("x", 3).normal((5,), "step", 2)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        root = NoiseStream(7)
        a = root.substream("x").normal((1000,))
        b = root.substream("y").normal((1000,))
        c = NoiseStream(8).substream("x").normal((1000,))
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.15
        assert abs(np.corrcoef(a, c)[0, 1]) < 0.15
        assert not np.array_equal(a, c)

    def test_seed_isolation_by_id(self):
        s1 = NoiseStream(1).substream("psi")
        s2 = NoiseStream(2).substream("psi")
        assert s1.substream_id("block", 0) != s2.substream_id("block", 0)
        assert s1.substream_id("block", 0)[1:] == s2.substream_id("block", 0)[1:]

    @pytest.mark.parametrize("seed", [-1, 2 ** 64])
    def test_seed_range(self, seed):
        with pytest.raises(ValueError):
            NoiseStream(seed)

    def test_negative_id(self):
        with pytest.raises(ValueError):
            NoiseStream(0).substream(-3)

    def test_silenced(self):
        s = NoiseStream(3).silenced()
        assert not np.any(s.normal((4, 4)))
        assert not np.any(s.block_normal(0, 10, (3,)))

    @given(st.integers(0, 300), st.integers(1, 200), st.integers(1, 150))
    def test_block_split_invariance(self, first, count, split):
        s = NoiseStream(11).substream("b")
        whole = s.block_normal(first, count, (2,), "t", 4)
        cut = min(split, count)
        parts = np.concatenate([s.block_normal(first, cut, (2,), "t", 4),
                                s.block_normal(first + cut, count - cut, (2,), "t", 4)])
        np.testing.assert_array_equal(whole, parts)

    def test_block_moments(self):
        z = NoiseStream(5).block_normal(0, 40 * MEMBER_BLOCK, (50,))
        assert abs(z.mean()) < 4 / np.sqrt(z.size)
        assert abs(z.var() - 1) < 4 * np.sqrt(2 / z.size)


class TestOrderedMap:
    @pytest.mark.parametrize("threads", [1, 2, 5])
    def test_order(self, threads):
        assert ordered_map(lambda x: x * x, range(20), threads) == [x * x for x in range(20)]
