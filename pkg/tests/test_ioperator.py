import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wickwave.ioperator import IOperatorSpec, apply_i, i_multiplier
from wickwave.torus import LatticeSpec, SpectralField, sobolev_norm

from conftest import random_coeffs


class TestSymbol:
    def test_identity_on_low_modes(self):
        spec = IOperatorSpec(4.0, 0.6)
        for n in [(0, 0), (4, 0), (2, 3), (0, -4)]:
            assert i_multiplier(spec, n) == 1.0

    def test_value_at_twice_cutoff(self):
        spec = IOperatorSpec(3.0, 0.5)
        assert i_multiplier(spec, (6, 0)) == pytest.approx(math.sqrt(0.5), rel=1e-14)

    def test_power_law_beyond(self):
        spec = IOperatorSpec(2.0, 0.7)
        for r in (4.0, 7.5, 40.0):
            assert spec.symbol(r) == pytest.approx((2.0 / r) ** 0.3, rel=1e-14)

    def test_sharp_profile(self):
        spec = IOperatorSpec(2.0, 0.5, "sharp")
        assert spec.symbol(3.0) == pytest.approx((2 / 3) ** 0.5)

    def test_s_near_one(self):
        spec = IOperatorSpec(2.0, 1 - 1e-12)
        assert spec.symbol(50.0) == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("N,s,profile", [(0.0, 0.5, "smoothstep"), (1.0, 1.0, "smoothstep"),
                                             (1.0, 0.5, "cubic")])
    def test_invalid(self, N, s, profile):
        with pytest.raises(ValueError):
            IOperatorSpec(N, s, profile)

    @given(st.floats(0.5, 20), st.floats(0.05, 0.95))
    def test_monotone_and_bounded(self, N, s):
        r = np.linspace(0, 6 * N, 400)
        m = IOperatorSpec(N, s).symbol(r)
        assert np.all(np.diff(m) <= 1e-15)
        assert np.all((m > 0) & (m <= 1))
        assert np.all(m * np.maximum(r, N) ** (1 - s) >= N ** (1 - s) * (1 - 1e-12))

    @given(st.floats(0.5, 20), st.floats(0.05, 0.95))
    def test_continuous_at_junctions(self, N, s):
        spec = IOperatorSpec(N, s)
        for r in (N, 2 * N):
            assert abs(spec.symbol(r * (1 + 1e-9)) - spec.symbol(r * (1 - 1e-9))) < 1e-7


class TestApply:
    @given(st.floats(1, 10), st.floats(0.1, 0.95), st.integers(0, 2 ** 32 - 1))
    def test_sandwich(self, N, s, seed):
        # ||f||_{H^s} <= ||I f||_{H^1} <= sqrt(2) N^(1-s) ||f||_{H^s}; the sqrt(2) absorbs <n>/|n|
        lat = LatticeSpec(12)
        f = SpectralField(lat, random_coeffs(np.random.default_rng(seed), 12, 2.0))
        If = sobolev_norm(apply_i(f, IOperatorSpec(N, s)), 1.0)
        assert sobolev_norm(f, s) <= If * (1 + 1e-12)
        assert If <= math.sqrt(2) * N ** (1 - s) * sobolev_norm(f, s) * (1 + 1e-12)

    def test_sandwich_constants_uniform_in_N(self, rng):
        lo, hi = [], []
        for N in (8, 16, 32, 64):
            lat = LatticeSpec(2 * N)
            spec = IOperatorSpec(N, 0.7)
            for _ in range(25):
                f = SpectralField(lat, random_coeffs(rng, 2 * N, 1.8))
                If = sobolev_norm(apply_i(f, spec), 1.0)
                lo.append(sobolev_norm(f, 0.7) / If)
                hi.append(If / (N ** 0.3 * sobolev_norm(f, 0.7)))
        assert max(lo) <= 1.0
        assert max(hi) <= math.sqrt(2)

    def test_identity_when_cutoff_covers_lattice(self, rng):
        lat = LatticeSpec(5)
        spec = IOperatorSpec(8.0, 0.5)
        assert spec.is_identity_on(lat)
        f = SpectralField(lat, random_coeffs(rng, 5))
        np.testing.assert_array_equal(apply_i(f, spec).coeffs, f.coeffs)
