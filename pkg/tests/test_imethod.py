"""Modified energy, its increments, the commutator, the cutoff schedule and growth fits."""
import json
import math

import numpy as np
import pytest
from conftest import random_coeffs
from hypothesis import given, strategies as st

from wickwave.dynamics import integrate_v
from wickwave.imethod import (CSV_COLUMNS, EnergyReport, ScheduleState, advance_schedule,
                              check_exponents, commutator_defect, energy_increments,
                              growth_diagnostics, initial_cutoff, modified_energy, normalize_h1,
                              random_field, schedule_event_lines, stage_length, truncated_r,
                              truncated_v, z3_margin)
from wickwave.ioperator import IOperatorSpec
from wickwave.noise import NoiseStream
from wickwave.stochastic import sample_psi, wick_powers, zero_wick_series
from wickwave.torus import (FieldPair, LatticeSpec, SpectralField, coeffs_to_grid,
                            convolution_power, embed_coeffs)


def _state(rng, K, decay=3.0, scale=1.0):
    lat = LatticeSpec(K)
    return FieldPair.from_arrays(lat, scale * random_coeffs(rng, K, decay),
                                 scale * random_coeffs(rng, K, decay))


class TestModifiedEnergy:
    def test_zero(self):
        assert modified_energy(FieldPair.zeros(LatticeSpec(4)), IOperatorSpec(2, 0.9)).E == 0.0

    @given(st.floats(-3, 3))
    def test_constant_field(self, c):
        lat = LatticeSpec(3)
        f = SpectralField.from_modes(lat, {(0, 0): c})
        rep = modified_energy(FieldPair(f, SpectralField.zeros(lat)), IOperatorSpec(1.5, 0.9))
        assert rep.E == pytest.approx(c * c / 2 + c ** 4 / 4, rel=1e-12, abs=1e-300)

    def test_rejects_even_power(self):
        with pytest.raises(ValueError):
            modified_energy(FieldPair.zeros(LatticeSpec(2)), None, k=2)

    def test_grid_oracle(self, rng):
        # physical-space quadrature of 1/2 (Iu)^2 + 1/2 |grad Iu|^2 + 1/2 (Iv)^2 + 1/4 (Iu)^4
        K, G = 5, 64
        st0 = _state(rng, K)
        spec = IOperatorSpec(2.0, 0.85)
        m = spec.on_lattice(st0.lattice)
        n1, n2 = st0.lattice.frequencies()
        Iu = m * st0.position.coeffs
        u = coeffs_to_grid(Iu, G)
        ux = coeffs_to_grid(1j * n1 * Iu, G)
        uy = coeffs_to_grid(1j * n2 * Iu, G)
        v = coeffs_to_grid(m * st0.velocity.coeffs, G)
        ref = np.mean(0.5 * u ** 2 + 0.5 * (ux ** 2 + uy ** 2) + 0.5 * v ** 2 + 0.25 * u ** 4)
        assert modified_energy(st0, spec).E == pytest.approx(ref, rel=1e-12)

    def test_identity_spec(self, rng):
        st0 = _state(rng, 4)
        a = modified_energy(st0, None)
        b = modified_energy(st0, IOperatorSpec(10.0, 0.9))
        assert a.E == pytest.approx(b.E, rel=1e-14)

    def test_energy_decreases_with_smaller_cutoff(self, rng):
        st0 = _state(rng, 8, decay=1.5)
        es = [modified_energy(st0, IOperatorSpec(N, 0.9)).quad for N in (1, 2, 4, 8, 16)]
        assert all(a <= b + 1e-15 for a, b in zip(es, es[1:]))

    def test_row_layout(self):
        rep = EnergyReport(0.5, 1.0, 0.4, 0.3, 0.3, (0.1, 0.2), 4.0, 2)
        row = rep.row()
        assert len(row) == len(CSV_COLUMNS)
        assert row[5:9] == [0.1, 0.2, 0.0, 0.0]


class TestIncrements:
    def test_identity_has_no_commutator(self, rng):
        st0 = _state(rng, 4)
        traj = integrate_v(st0.position, st0.velocity, 0.01, 20, False)
        bud = energy_increments(traj, None, None)
        assert np.max(np.abs(bud.increments[:, 0])) < 1e-13

    def test_zero_forcing_terms_vanish(self, rng):
        st0 = _state(rng, 4)
        traj = integrate_v(st0.position, st0.velocity, 0.01, 20, True)
        wick = zero_wick_series(st0.lattice, np.arange(41) * 0.005, 3)
        bud = energy_increments(traj, wick.subsample(2), IOperatorSpec(1.5, 0.9))
        assert np.all(bud.increments[:, 1:] == 0)

    def test_undamped_identity_energy_conserved(self, rng):
        st0 = _state(rng, 6, decay=3.5, scale=0.5)
        traj = integrate_v(st0.position, st0.velocity, 0.005, 200, False)
        bud = energy_increments(traj, None, None)
        assert np.ptp(bud.energies) < 1e-4 * bud.energies[0]

    def test_defect_second_order(self, rng):
        # noise-free, damped, nontrivial I: the trapezoid budget closes at O(dt^2)
        st0 = _state(rng, 8, decay=3.5, scale=0.5)
        spec = IOperatorSpec(2.0, 0.9)
        T = 0.5
        defects = []
        for n in (50, 100, 200):
            traj = integrate_v(st0.position, st0.velocity, T / n, n, True)
            defects.append(abs(energy_increments(traj, None, spec).defect()))
        orders = np.log2(np.array(defects[:-1]) / np.array(defects[1:]))
        assert np.all(orders > 1.7)

    def test_wick_grid_must_match(self, rng):
        st0 = _state(rng, 4)
        traj = integrate_v(st0.position, st0.velocity, 0.01, 4, False)
        wick = zero_wick_series(st0.lattice, np.arange(5) * 0.01, 3, grid_size=64)
        with pytest.raises(ValueError, match="grid"):
            energy_increments(traj, wick, None)

    def test_reports(self, rng):
        st0 = _state(rng, 3)
        traj = integrate_v(st0.position, st0.velocity, 0.01, 5, True)
        reps = energy_increments(traj, None, None).reports(Nk=4.0, stage=1)
        assert len(reps) == 6
        assert reps[0].increments == (0.0,) * 4
        assert reps[-1].stage == 1


class TestCommutator:
    def test_k1_is_zero(self, rng):
        f = random_field(LatticeSpec(4), rng, 1.0)
        assert commutator_defect(f, 1, IOperatorSpec(2, 0.9)) == 0.0

    def test_rejects_k4(self, rng):
        with pytest.raises(ValueError):
            commutator_defect(random_field(LatticeSpec(2), rng, 1.0), 4, IOperatorSpec(2, 0.9))

    @pytest.mark.parametrize("k", [2, 3])
    def test_low_support_is_exactly_zero(self, rng, k):
        N = 12
        lat = LatticeSpec(16)
        f = random_field(lat, rng, 1.0)
        f = SpectralField(lat, f.coeffs * lat.disc_mask(N / 3))
        assert commutator_defect(f, k, IOperatorSpec(N, 0.7)) == 0.0

    @pytest.mark.parametrize("k", [2, 3])
    def test_convolution_oracle(self, rng, k):
        K = 4
        f = random_field(LatticeSpec(K), rng, 1.0)
        spec = IOperatorSpec(1.5, 0.7)
        big = LatticeSpec(k * K)
        m = spec.on_lattice(big)
        c = embed_coeffs(f.coeffs, big.K)
        ref = np.sqrt(np.sum(np.abs(convolution_power(m * c, k) - m * convolution_power(c, k)) ** 2))
        assert commutator_defect(f, k, spec) == pytest.approx(ref, rel=1e-10)

    def test_normalize(self, rng):
        lat = LatticeSpec(6)
        spec = IOperatorSpec(2, 0.8)
        f = normalize_h1(random_field(lat, rng, 1.0), spec)
        m = spec.on_lattice(lat)
        assert np.sum(lat.bessel() ** 2 * np.abs(m * f.coeffs) ** 2) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            normalize_h1(SpectralField.zeros(lat), spec)


class TestSchedule:
    def test_exponent_window(self):
        check_exponents(0.9, 0.7, 0.5)
        with pytest.raises(ValueError):
            check_exponents(0.7, 0.2, 0.1)
        with pytest.raises(ValueError):
            check_exponents(0.8, 0.4, 0.4)
        with pytest.raises(ValueError):
            check_exponents(0.95, 0.5, 0.6)

    def test_log_cutoff(self):
        st0 = ScheduleState(16.0, 1.2, 0.9, 0.7, 0.5)
        nxt, _ = advance_schedule(st0, 1.0)
        assert nxt.k == 1
        assert nxt.log_N == pytest.approx(1.2 * math.log(16.0), rel=1e-15)

    def test_no_overflow_in_log_form(self):
        st0 = ScheduleState(16.0, 2.0, 0.9, 0.7, 0.5, k=12)
        assert math.isinf(st0.N)
        assert math.isfinite(st0.log_N)

    @given(st.floats(0.1, 50), st.floats(1.01, 3), st.floats(0.81, 0.99))
    def test_z3_formula(self, logn, sigma, s):
        lo, hi = 2 * (1 - s), 1 - 3 * (1 - s)
        beta = lo + 0.4 * (hi - lo)
        alpha = lo + 0.8 * (hi - lo)
        Nk, Nn = math.exp(logn), math.exp(sigma * logn)
        ref = beta * math.log(Nn) - math.log(Nn ** (2 * (1 - s)) * Nk ** alpha + Nk ** (2 * alpha))
        assert z3_margin(logn, sigma, s, alpha, beta) == pytest.approx(ref, rel=1e-9, abs=1e-9)

    def test_violation_event(self):
        st0 = ScheduleState(4.0, 1.5, 0.9, 0.7, 0.5)
        nxt, events = advance_schedule(st0, 4.0 ** 0.7 * 1.01)
        kinds = [e["event"] for e in events]
        assert "schedule-violation" in kinds
        assert nxt.violations == 1
        nxt2, events2 = advance_schedule(nxt, 1.0)
        assert nxt2.violations == 1
        assert "schedule-violation" not in [e["event"] for e in events2]

    def test_z3_event_follows_margin(self):
        st0 = ScheduleState(4.0, 1.01, 0.9, 0.7, 0.5)
        _, events = advance_schedule(st0, 1.0)
        assert (st0.z3() <= 0) == ("z3-violation" in [e["event"] for e in events])

    def test_validation(self):
        with pytest.raises(ValueError):
            ScheduleState(1.0, 1.2, 0.9, 0.7, 0.5)
        with pytest.raises(ValueError):
            ScheduleState(4.0, 1.0, 0.9, 0.7, 0.5)
        with pytest.raises(ValueError):
            ScheduleState(4.0, 1.2, 0.7, 0.2, 0.1)

    def test_stage_length(self):
        assert stage_length(0.5) == 1.0
        assert stage_length(4.0) == 0.25
        assert stage_length(4.0, 2.0) == 0.5

    def test_event_lines(self):
        text = schedule_event_lines([{"b": 1, "a": 2}, {"event": "stage"}])
        lines = text.splitlines()
        assert lines[0] == '{"a": 2, "b": 1}'
        assert json.loads(lines[1]) == {"event": "stage"}
        assert text.endswith("\n")


class TestInitialCutoff:
    def test_zero_field_takes_start(self):
        assert initial_cutoff(FieldPair.zeros(LatticeSpec(4)), 0.9, 0.5) == 2.0

    def test_smallest_admissible(self, rng):
        st0 = _state(rng, 16, decay=1.2, scale=3.0)
        N = initial_cutoff(st0, 0.9, 0.5)
        assert N > 2.0
        assert modified_energy(st0, IOperatorSpec(N, 0.9)).E <= N ** 0.5
        assert modified_energy(st0, IOperatorSpec(N / 2, 0.9)).E > (N / 2) ** 0.5


class TestGrowth:
    def test_constant(self):
        fit = growth_diagnostics(np.linspace(0, 1, 20), np.full(20, 3.0))
        assert fit.C == 3.0 and fit.c == 0.0 and fit.C_omega == 0.0
        assert not fit.exceeded

    def test_insufficient_data(self):
        with pytest.raises(ValueError, match="insufficient-data"):
            growth_diagnostics(np.arange(5), np.ones(5))

    def test_positive_norms(self):
        with pytest.raises(ValueError):
            growth_diagnostics(np.arange(12), np.r_[np.ones(11), 0.0])

    def test_recovers_double_exponential(self):
        t = np.linspace(0, 3, 60)
        a, b, kappa = 0.5, 0.3, 0.2
        y = np.exp(a + b * np.exp(kappa * t ** 2))
        fit = growth_diagnostics(t, y)
        assert fit.C_omega == pytest.approx(kappa, rel=0.1)
        assert fit.c * math.log(2 + y[0]) == pytest.approx(b, rel=0.1)
        assert not fit.exceeded
        assert fit.residual < 1e-6

    def test_envelope_bounds_noisy_data(self, rng):
        t = np.linspace(0, 2, 40)
        y = np.exp(1 + 0.2 * np.exp(0.5 * t ** 2) + 0.05 * rng.standard_normal(40))
        fit = growth_diagnostics(t, y)
        env = math.log(fit.C) + fit.c * math.log(2 + y[0]) * np.exp(fit.C_omega * t ** 2)
        assert np.all(np.log(y) <= env + 1e-10)
        assert not fit.exceeded


@pytest.fixture(scope="module")
def path():
    return sample_psi(LatticeSpec(4), np.linspace(0, 2, 41), NoiseStream(3))


class TestRandomConstants:
    def test_v_finite(self, path):
        V = truncated_v(wick_powers(path, 3))
        assert np.isfinite(V) and V > 0

    def test_v_needs_cubic(self, path):
        with pytest.raises(ValueError):
            truncated_v(wick_powers(path, 2))

    def test_v_zero_forcing_small(self):
        wick = zero_wick_series(LatticeSpec(3), np.linspace(0, 2, 21), 3)
        assert truncated_v(wick) < 1e-12

    def test_r_positive(self, path):
        R = truncated_r(path, [2.0, 4.0], 0.9)
        assert np.isfinite(R) and R > 0

    def test_r_grows_with_window(self, path):
        assert truncated_r(path, [2.0], 0.9, J=2) > truncated_r(path, [2.0], 0.9, J=1)
